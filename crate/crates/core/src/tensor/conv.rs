//! Convolutions (cross-correlation, no kernel flip) and 1-D max pooling.

use std::rc::Rc;

use super::{Real, Tensor};
use crate::error::{Error, Result};

fn out_extent(op: &'static str, len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = len + 2 * pad;
    if k > padded {
        return Err(Error::KernelTooLarge { op, kernel: k, padded });
    }
    if stride == 0 {
        return Err(Error::Config(format!("{op}: stride must be positive")));
    }
    Ok((padded - k) / stride + 1)
}

fn check_bias<T: Real>(op: &'static str, b: Option<&Tensor<T>>, cout: usize) -> Result<()> {
    match b {
        Some(b) if b.shape() != [cout] => Err(Error::ShapeMismatch {
            op,
            lhs: vec![cout],
            rhs: b.shape().to_vec(),
        }),
        _ => Ok(()),
    }
}

/// `x: batch × in_ch × len`, `w: out_ch × in_ch × k`, `b: out_ch`.
pub fn conv1d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            lhs: xs.to_vec(),
            rhs: ws.to_vec(),
        });
    }
    let (bn, cin, len) = (xs[0], xs[1], xs[2]);
    let (cout, k) = (ws[0], ws[2]);
    check_bias("conv1d", b, cout)?;
    let lout = out_extent("conv1d", len, k, stride, padding)?;

    // for each output position, the input index of kernel tap 0 (may be negative)
    let base = move |t: usize| (t * stride) as isize - padding as isize;

    let mut out = vec![T::zero(); bn * cout * lout];
    {
        let (xd, wd) = (x.data(), w.data());
        let bd = b.map(|b| b.to_vec());
        for n in 0..bn {
            for co in 0..cout {
                let o = &mut out[(n * cout + co) * lout..][..lout];
                if let Some(bd) = &bd {
                    o.fill(bd[co]);
                }
                for ci in 0..cin {
                    let xr = &xd[(n * cin + ci) * len..][..len];
                    let wr = &wd[(co * cin + ci) * k..][..k];
                    for (t, ov) in o.iter_mut().enumerate() {
                        let s = base(t);
                        let mut acc = T::zero();
                        for (kk, &wv) in wr.iter().enumerate() {
                            let i = s + kk as isize;
                            if i >= 0 && (i as usize) < len {
                                acc += wv * xr[i as usize];
                            }
                        }
                        *ov += acc;
                    }
                }
            }
        }
    }

    let mut inputs = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        inputs.push(b.clone());
    }
    let has_bias = b.is_some();
    let (xc, wc) = (x.clone(), w.clone());
    Ok(Tensor::from_op(out, vec![bn, cout, lout], "conv1d", inputs, move |g| {
        let (xd, wd) = (xc.data(), wc.data());
        let mut gx = xc.requires_grad().then(|| vec![T::zero(); xd.len()]);
        let mut gw = wc.requires_grad().then(|| vec![T::zero(); wd.len()]);
        for n in 0..bn {
            for co in 0..cout {
                let gr = &g[(n * cout + co) * lout..][..lout];
                for ci in 0..cin {
                    let xoff = (n * cin + ci) * len;
                    let woff = (co * cin + ci) * k;
                    for (t, &gv) in gr.iter().enumerate() {
                        let s = base(t);
                        for kk in 0..k {
                            let i = s + kk as isize;
                            if i < 0 || i as usize >= len {
                                continue;
                            }
                            let i = i as usize;
                            if let Some(gx) = gx.as_mut() {
                                gx[xoff + i] += gv * wd[woff + kk];
                            }
                            if let Some(gw) = gw.as_mut() {
                                gw[woff + kk] += gv * xd[xoff + i];
                            }
                        }
                    }
                }
            }
        }
        let mut res = vec![gx, gw];
        if has_bias {
            let mut gb = vec![T::zero(); cout];
            for n in 0..bn {
                for (co, gbv) in gb.iter_mut().enumerate() {
                    *gbv += g[(n * cout + co) * lout..][..lout].iter().copied().sum();
                }
            }
            res.push(Some(gb));
        }
        res
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dOpts {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
}

impl Default for Conv3dOpts {
    fn default() -> Self {
        Conv3dOpts {
            stride: [1; 3],
            padding: [0; 3],
            groups: 1,
        }
    }
}

impl Conv3dOpts {
    pub fn uniform(stride: usize, padding: usize) -> Self {
        Conv3dOpts {
            stride: [stride; 3],
            padding: [padding; 3],
            groups: 1,
        }
    }
}

struct Geom3 {
    bn: usize,
    cin: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    inp: [usize; 3],
    ker: [usize; 3],
    out: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
}

impl Geom3 {
    fn in_vol(&self) -> usize {
        self.inp.iter().product()
    }
    fn out_vol(&self) -> usize {
        self.out.iter().product()
    }
    fn ker_vol(&self) -> usize {
        self.ker.iter().product()
    }

    /// Output positions `o` along axis `a` whose tap `k` lands inside the input,
    /// as a half-open range.
    fn valid(&self, a: usize, k: usize) -> (usize, usize) {
        let (s, p, n) = (self.stride[a], self.pad[a], self.inp[a]);
        // need 0 <= o*s + k - p < n
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        let hi = if n + p > k { (n + p - k - 1) / s + 1 } else { 0 };
        (lo, hi.min(self.out[a]).max(lo))
    }

    /// Visits every (batch, out channel, in channel, kernel tap, output
    /// position) with the flat offsets of x, w and out.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [_, ih, iw] = self.inp;
        let [kd, kh, kw] = self.ker;
        let [_, oh, ow] = self.out;
        for n in 0..self.bn {
            for co in 0..self.cout {
                let grp = co / self.cout_g;
                let obase = (n * self.cout + co) * self.out_vol();
                for cl in 0..self.cin_g {
                    let ci = grp * self.cin_g + cl;
                    let xbase = (n * self.cin + ci) * self.in_vol();
                    let wbase = (co * self.cin_g + cl) * self.ker_vol();
                    for a in 0..kd {
                        let (d0, d1) = self.valid(0, a);
                        for b in 0..kh {
                            let (h0, h1) = self.valid(1, b);
                            for c in 0..kw {
                                let (w0, w1) = self.valid(2, c);
                                let widx = wbase + (a * kh + b) * kw + c;
                                for od in d0..d1 {
                                    let id = od * self.stride[0] + a - self.pad[0];
                                    for oh_ in h0..h1 {
                                        let ih_ = oh_ * self.stride[1] + b - self.pad[1];
                                        let orow = obase + (od * oh + oh_) * ow;
                                        let xrow = xbase + (id * ih + ih_) * iw;
                                        for ow_ in w0..w1 {
                                            let iw_ = ow_ * self.stride[2] + c - self.pad[2];
                                            f(xrow + iw_, widx, orow + ow_, co);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `x: batch × in_ch × d × h × w`, `w: out_ch × (in_ch/groups) × kd × kh × kw`.
pub fn conv3d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, opts: Conv3dOpts) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    let groups = opts.groups.max(1);
    let mismatch = || Error::ShapeMismatch {
        op: "conv3d",
        lhs: xs.to_vec(),
        rhs: ws.to_vec(),
    };
    if xs.len() != 5 || ws.len() != 5 {
        return Err(mismatch());
    }
    let (cin, cout) = (xs[1], ws[0]);
    if cin % groups != 0 || cout % groups != 0 || ws[1] * groups != cin {
        return Err(mismatch());
    }
    check_bias("conv3d", b, cout)?;
    let mut out_sp = [0; 3];
    for a in 0..3 {
        out_sp[a] = out_extent("conv3d", xs[2 + a], ws[2 + a], opts.stride[a], opts.padding[a])?;
    }
    let geom = Rc::new(Geom3 {
        bn: xs[0],
        cin,
        cout,
        cin_g: cin / groups,
        cout_g: cout / groups,
        inp: [xs[2], xs[3], xs[4]],
        ker: [ws[2], ws[3], ws[4]],
        out: out_sp,
        stride: opts.stride,
        pad: opts.padding,
    });

    let ov = geom.out_vol();
    let mut out = vec![T::zero(); geom.bn * cout * ov];
    if let Some(b) = b {
        let bd = b.data();
        for (i, chunk) in out.chunks_mut(ov).enumerate() {
            chunk.fill(bd[i % cout]);
        }
    }
    {
        let (xd, wd) = (x.data(), w.data());
        geom.for_each(|xi, wi, oi, _| out[oi] += wd[wi] * xd[xi]);
    }

    let mut shape = vec![geom.bn, cout];
    shape.extend(out_sp);
    let mut inputs = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        inputs.push(b.clone());
    }
    let has_bias = b.is_some();
    let (xc, wc) = (x.clone(), w.clone());
    Ok(Tensor::from_op(out, shape, "conv3d", inputs, move |g| {
        let (xd, wd) = (xc.data(), wc.data());
        let gx = xc.requires_grad().then(|| {
            let mut gx = vec![T::zero(); xd.len()];
            geom.for_each(|xi, wi, oi, _| gx[xi] += g[oi] * wd[wi]);
            gx
        });
        let gw = wc.requires_grad().then(|| {
            let mut gw = vec![T::zero(); wd.len()];
            geom.for_each(|xi, wi, oi, _| gw[wi] += g[oi] * xd[xi]);
            gw
        });
        let mut res = vec![gx, gw];
        if has_bias {
            let mut gb = vec![T::zero(); geom.cout];
            for (i, chunk) in g.chunks(geom.out_vol()).enumerate() {
                gb[i % geom.cout] += chunk.iter().copied().sum();
            }
            res.push(Some(gb));
        }
        res
    }))
}

/// Max pooling over the last axis of `batch × ch × len`. Gradient flows to the
/// first maximal element of each window.
pub fn maxpool1d<T: Real>(x: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(Error::InvalidTensor(format!(
            "maxpool1d expects batch × ch × len, got {:?}",
            x.shape()
        )));
    }
    let (rows, len) = (x.shape()[0] * x.shape()[1], x.shape()[2]);
    let lout = out_extent("maxpool1d", len, k, stride, 0)?;
    let mut out = Vec::with_capacity(rows * lout);
    let mut arg = Vec::with_capacity(rows * lout);
    {
        let d = x.data();
        for r in 0..rows {
            for t in 0..lout {
                let start = r * len + t * stride;
                let mut best = start;
                for i in start + 1..start + k {
                    if d[i] > d[best] {
                        best = i;
                    }
                }
                out.push(d[best]);
                arg.push(best);
            }
        }
    }
    let n = x.numel();
    let shape = vec![x.shape()[0], x.shape()[1], lout];
    Ok(Tensor::from_op(out, shape, "maxpool1d", vec![x.clone()], move |g| {
        let mut gx = vec![T::zero(); n];
        for (&a, &gv) in arg.iter().zip(g) {
            gx[a] += gv;
        }
        vec![Some(gx)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(v: &[f64], s: &[usize]) -> Tensor<f64> {
        Tensor::new(v.to_vec(), s).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).unwrap()
    }

    #[test]
    fn conv1d_small_cases() {
        let x = t(&[1., 2., 3.], &[1, 1, 3]);
        let y = conv1d(&x, &t(&[1., 1.], &[1, 1, 2]), Some(&t(&[0.], &[1])), 1, 0).unwrap();
        assert_eq!(y.to_vec(), vec![3., 5.]);
        let id = conv1d(&x, &t(&[1.], &[1, 1, 1]), None, 1, 0).unwrap();
        assert_eq!(id.to_vec(), x.to_vec());
    }

    #[test]
    fn conv1d_output_length_and_errors() {
        let x = Tensor::<f64>::zeros(&[1, 2, 10]);
        let w = Tensor::<f64>::zeros(&[3, 2, 3]);
        assert_eq!(conv1d(&x, &w, None, 2, 1).unwrap().shape(), &[1, 3, 5]);
        let big = Tensor::<f64>::zeros(&[3, 2, 13]);
        assert!(matches!(
            conv1d(&x, &big, None, 1, 1),
            Err(Error::KernelTooLarge {
                kernel: 13,
                padded: 12,
                ..
            })
        ));
    }

    #[test]
    fn conv1d_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&mut rng, &[2, 3, 10]);
        let w = random(&mut rng, &[4, 3, 3]);
        let b = random(&mut rng, &[4]);
        for (stride, pad) in [(1, 0), (2, 1), (3, 2)] {
            let y = conv1d(&x, &w, Some(&b), stride, pad).unwrap();
            let lout = (10 + 2 * pad - 3) / stride + 1;
            let (xd, wd, bd, yd) = (x.to_vec(), w.to_vec(), b.to_vec(), y.to_vec());
            for n in 0..2 {
                for co in 0..4 {
                    for o in 0..lout {
                        let mut s = bd[co];
                        for ci in 0..3 {
                            for k in 0..3 {
                                let i = (o * stride + k) as isize - pad as isize;
                                if (0..10).contains(&i) {
                                    s += wd[(co * 3 + ci) * 3 + k] * xd[(n * 3 + ci) * 10 + i as usize];
                                }
                            }
                        }
                        let got = yd[(n * 4 + co) * lout + o];
                        assert!((got - s).abs() <= 1e-12, "{got} vs {s}");
                    }
                }
            }
        }
    }

    #[test]
    fn conv3d_identity_and_sum() {
        let x = Tensor::<f64>::ones(&[1, 1, 2, 2, 2]);
        let one = Tensor::<f64>::ones(&[1, 1, 1, 1, 1]);
        assert_eq!(
            conv3d(&x, &one, None, Conv3dOpts::default()).unwrap().to_vec(),
            x.to_vec()
        );
        let k = Tensor::<f64>::ones(&[1, 1, 2, 2, 2]);
        let y = conv3d(&x, &k, None, Conv3dOpts::default()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1, 1]);
        assert_eq!(y.to_vec(), vec![8.0]);
    }

    #[test]
    fn maxpool_values_and_tie_routing() {
        let x = t(&[1., 3., 2., 5.], &[1, 1, 4]);
        assert_eq!(maxpool1d(&x, 2, 2).unwrap().to_vec(), vec![3., 5.]);

        let p = Tensor::<f64>::param(vec![4., 4., 1., 1.], &[1, 1, 4]).unwrap();
        maxpool1d(&p, 2, 2).unwrap().sum_all().backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![1., 0., 1., 0.]);
    }
}
