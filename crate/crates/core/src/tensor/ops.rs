use std::rc::Rc;

use super::{check_axis, numel_of, split_at_axis, Real, Tensor};
use crate::error::{Error, Result};

/// Trailing-axis aligned broadcast of two shapes (size-1 extents expand).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out`, the flat offset of the source element that
/// broadcasts onto it.
fn broadcast_offsets(src: &[usize], out: &[usize]) -> Vec<usize> {
    let r = out.len();
    let pad = r - src.len();
    let mut strides = vec![0usize; r];
    let mut s = 1;
    for i in (0..src.len()).rev() {
        if src[i] != 1 {
            strides[i + pad] = s;
        }
        s *= src[i];
    }
    strided_offsets(out, &strides)
}

/// Walks `shape` in row-major order, emitting `Σ idx[d]·strides[d]`.
fn strided_offsets(shape: &[usize], strides: &[usize]) -> Vec<usize> {
    let n = numel_of(shape);
    let r = shape.len();
    let mut offs = Vec::with_capacity(n);
    let mut idx = vec![0usize; r];
    let mut off = 0usize;
    for _ in 0..n {
        offs.push(off);
        for d in (0..r).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < shape[d] {
                break;
            }
            off -= strides[d] * shape[d];
            idx[d] = 0;
        }
    }
    offs
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

type Partial<T> = fn(T, T) -> T;

impl<T: Real> Tensor<T> {
    fn zip_broadcast(
        &self,
        other: &Tensor<T>,
        op: &'static str,
        f: fn(T, T) -> T,
        dfa: Partial<T>,
        dfb: Partial<T>,
    ) -> Result<Tensor<T>> {
        let out_shape = broadcast_shape(self.shape(), other.shape()).ok_or_else(|| Error::ShapeMismatch {
            op,
            lhs: self.shape().to_vec(),
            rhs: other.shape().to_vec(),
        })?;
        let n = numel_of(&out_shape);
        let (ao, bo) = if self.shape() == other.shape() {
            (None, None)
        } else {
            (
                Some(Rc::new(broadcast_offsets(self.shape(), &out_shape))),
                Some(Rc::new(broadcast_offsets(other.shape(), &out_shape))),
            )
        };
        let data = {
            let (ad, bd) = (self.data(), other.data());
            match (&ao, &bo) {
                (Some(ao), Some(bo)) => (0..n).map(|i| f(ad[ao[i]], bd[bo[i]])).collect(),
                _ => ad.iter().zip(bd.iter()).map(|(&x, &y)| f(x, y)).collect(),
            }
        };
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            data,
            out_shape,
            op,
            vec![self.clone(), other.clone()],
            move |g| {
                let (ad, bd) = (a.data(), b.data());
                let at = |i: usize| ao.as_ref().map_or(i, |o| o[i]);
                let bt = |i: usize| bo.as_ref().map_or(i, |o| o[i]);
                let ga = a.requires_grad().then(|| {
                    let mut ga = vec![T::zero(); ad.len()];
                    for (i, &gi) in g.iter().enumerate() {
                        let (x, y) = (at(i), bt(i));
                        ga[x] += gi * dfa(ad[x], bd[y]);
                    }
                    ga
                });
                let gb = b.requires_grad().then(|| {
                    let mut gb = vec![T::zero(); bd.len()];
                    for (i, &gi) in g.iter().enumerate() {
                        let (x, y) = (at(i), bt(i));
                        gb[y] += gi * dfb(ad[x], bd[y]);
                    }
                    gb
                });
                vec![ga, gb]
            },
        ))
    }

    /// Broadcasting addition (`⊕`).
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_broadcast(other, "add", |x, y| x + y, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_broadcast(other, "sub", |x, y| x - y, |_, _| T::one(), |_, _| -T::one())
    }

    /// Broadcasting elementwise product (`⊗`).
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_broadcast(other, "mul", |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_broadcast(other, "div", |x, y| x / y, |_, y| T::one() / y, |x, y| -x / (y * y))
    }

    fn unary(&self, op: &'static str, f: fn(T) -> T, df: fn(T, T) -> T) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&v| f(v)).collect();
        let x = self.clone();
        let y = data.clone();
        Tensor::from_op(data, self.shape().to_vec(), op, vec![self.clone()], move |g| {
            let xd = x.data();
            vec![Some(
                g.iter()
                    .zip(xd.iter().zip(&y))
                    .map(|(&gi, (&xi, &yi))| gi * df(xi, yi))
                    .collect(),
            )]
        })
    }

    /// `max(x, 0)`; the derivative at exactly 0 is taken as 0.
    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            "relu",
            |v| if v > T::zero() { v } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary("tanh", |v| v.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(
            "sigmoid",
            |v| T::one() / (T::one() + (-v).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary("exp", |v| v.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary("ln", |v| v.ln(), |x, _| T::one() / x)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary("neg", |v| -v, |_, _| -T::one())
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v * c).collect();
        Tensor::from_op(data, self.shape().to_vec(), "scale", vec![self.clone()], move |g| {
            vec![Some(g.iter().map(|&v| v * c).collect())]
        })
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v + c).collect();
        Tensor::from_op(data, self.shape().to_vec(), "add_scalar", vec![self.clone()], |g| {
            vec![Some(g.to_vec())]
        })
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(vec![s], vec![], "sum", vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let inv = T::one() / T::of(self.numel() as f64);
        self.sum_all().scale(inv)
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        check_axis("sum_axis", axis, self.rank())?;
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        let mut out = vec![T::zero(); outer * inner];
        {
            let d = self.data();
            for o in 0..outer {
                for j in 0..n {
                    let src = &d[(o * n + j) * inner..(o * n + j + 1) * inner];
                    let dst = &mut out[o * inner..(o + 1) * inner];
                    for (a, &v) in dst.iter_mut().zip(src) {
                        *a += v;
                    }
                }
            }
        }
        let mut shape = self.shape().to_vec();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        Ok(Tensor::from_op(out, shape, "sum_axis", vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); outer * n * inner];
            for o in 0..outer {
                for j in 0..n {
                    gx[(o * n + j) * inner..(o * n + j + 1) * inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        check_axis("mean_axis", axis, self.rank())?;
        let n = self.shape()[axis];
        Ok(self.sum_axis(axis, keepdim)?.scale(T::one() / T::of(n as f64)))
    }

    /// Numerically stable softmax along `axis` (max-subtracted).
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        check_axis("softmax", axis, self.rank())?;
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        let mut y = vec![T::zero(); self.numel()];
        {
            let d = self.data();
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * n + j) * inner + i;
                    let m = (0..n).map(|j| d[at(j)]).fold(T::neg_infinity(), T::max);
                    let mut s = T::zero();
                    for j in 0..n {
                        let e = (d[at(j)] - m).exp();
                        y[at(j)] = e;
                        s += e;
                    }
                    for j in 0..n {
                        y[at(j)] /= s;
                    }
                }
            }
        }
        let yb = y.clone();
        Ok(Tensor::from_op(
            y,
            self.shape().to_vec(),
            "softmax",
            vec![self.clone()],
            move |g| {
                let mut gx = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let dot: T = (0..n).map(|j| g[at(j)] * yb[at(j)]).sum();
                        for j in 0..n {
                            gx[at(j)] = yb[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Tensor<T>> {
        check_axis("log_softmax", axis, self.rank())?;
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        let mut y = vec![T::zero(); self.numel()];
        {
            let d = self.data();
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * n + j) * inner + i;
                    let m = (0..n).map(|j| d[at(j)]).fold(T::neg_infinity(), T::max);
                    let lse = m + (0..n).map(|j| (d[at(j)] - m).exp()).sum::<T>().ln();
                    for j in 0..n {
                        y[at(j)] = d[at(j)] - lse;
                    }
                }
            }
        }
        let yb = y.clone();
        Ok(Tensor::from_op(
            y,
            self.shape().to_vec(),
            "log_softmax",
            vec![self.clone()],
            move |g| {
                let mut gx = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let gs: T = (0..n).map(|j| g[at(j)]).sum();
                        for j in 0..n {
                            gx[at(j)] = g[at(j)] - yb[at(j)].exp() * gs;
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Batched matrix product over the trailing two axes; leading axes
    /// broadcast.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (ra, rb) = (sa.len(), sb.len());
        let (m, n, n2, p) = (sa[ra - 2], sa[ra - 1], sb[rb - 2], sb[rb - 1]);
        if n != n2 {
            return Err(mismatch());
        }
        let lead = broadcast_shape(&sa[..ra - 2], &sb[..rb - 2]).ok_or_else(mismatch)?;
        let batch = numel_of(&lead);
        let a_off = Rc::new(broadcast_offsets(&sa[..ra - 2], &lead));
        let b_off = Rc::new(broadcast_offsets(&sb[..rb - 2], &lead));

        let mut out = vec![T::zero(); batch * m * p];
        {
            let (ad, bd) = (self.data(), other.data());
            for bi in 0..batch {
                let a = &ad[a_off[bi] * m * n..][..m * n];
                let b = &bd[b_off[bi] * n * p..][..n * p];
                let c = &mut out[bi * m * p..][..m * p];
                for i in 0..m {
                    let crow = &mut c[i * p..(i + 1) * p];
                    for k in 0..n {
                        let aik = a[i * n + k];
                        if aik == T::zero() {
                            continue;
                        }
                        for (cv, &bv) in crow.iter_mut().zip(&b[k * p..(k + 1) * p]) {
                            *cv += aik * bv;
                        }
                    }
                }
            }
        }
        let mut shape = lead;
        shape.extend([m, p]);
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            out,
            shape,
            "matmul",
            vec![self.clone(), other.clone()],
            move |g| {
                let (ad, bd) = (a.data(), b.data());
                let ga = a.requires_grad().then(|| {
                    let mut ga = vec![T::zero(); ad.len()];
                    for bi in 0..batch {
                        let bm = &bd[b_off[bi] * n * p..][..n * p];
                        let gm = &g[bi * m * p..][..m * p];
                        let gam = &mut ga[a_off[bi] * m * n..][..m * n];
                        for i in 0..m {
                            for k in 0..n {
                                let mut s = T::zero();
                                for j in 0..p {
                                    s += gm[i * p + j] * bm[k * p + j];
                                }
                                gam[i * n + k] += s;
                            }
                        }
                    }
                    ga
                });
                let gb = b.requires_grad().then(|| {
                    let mut gb = vec![T::zero(); bd.len()];
                    for bi in 0..batch {
                        let am = &ad[a_off[bi] * m * n..][..m * n];
                        let gm = &g[bi * m * p..][..m * p];
                        let gbm = &mut gb[b_off[bi] * n * p..][..n * p];
                        for i in 0..m {
                            for k in 0..n {
                                let aik = am[i * n + k];
                                for j in 0..p {
                                    gbm[k * p + j] += aik * gm[i * p + j];
                                }
                            }
                        }
                    }
                    gb
                });
                vec![ga, gb]
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel_of(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            "reshape",
            vec![self.clone()],
            |g| vec![Some(g.to_vec())],
        ))
    }

    /// Collapses all axes from `from_axis` onward into one.
    pub fn flatten(&self, from_axis: usize) -> Result<Tensor<T>> {
        check_axis("flatten", from_axis, self.rank())?;
        let mut shape = self.shape()[..from_axis].to_vec();
        shape.push(numel_of(&self.shape()[from_axis..]));
        self.reshape(&shape)
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidTensor(format!(
                "permute: {perm:?} is not a permutation of rank {r}"
            )));
        }
        let src_strides = contiguous_strides(self.shape());
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let offs = Rc::new(strided_offsets(&shape, &strides));
        let data = {
            let d = self.data();
            offs.iter().map(|&o| d[o]).collect()
        };
        Ok(Tensor::from_op(data, shape, "permute", vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); g.len()];
            for (i, &o) in offs.iter().enumerate() {
                gx[o] = g[i];
            }
            vec![Some(gx)]
        }))
    }

    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor<T>> {
        check_axis("transpose", a.max(b), self.rank())?;
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// Slice `len` entries along `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        check_axis("narrow", axis, self.rank())?;
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        if len == 0 || start + len > n {
            return Err(Error::InvalidTensor(format!(
                "narrow: range {start}..{} outside extent {n}",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        {
            let d = self.data();
            for o in 0..outer {
                out.extend_from_slice(&d[(o * n + start) * inner..(o * n + start + len) * inner]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(out, shape, "narrow", vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); outer * n * inner];
            for o in 0..outer {
                gx[(o * n + start) * inner..(o * n + start + len) * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }))
    }

    /// Mean binary cross-entropy between `self` (logits) and `targets`,
    /// evaluated in the overflow-free form
    /// `max(x,0) − x·y + ln(1 + e^{−|x|})`.
    pub fn bce_with_logits(&self, targets: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != targets.shape() {
            return Err(Error::ShapeMismatch {
                op: "bce_with_logits",
                lhs: self.shape().to_vec(),
                rhs: targets.shape().to_vec(),
            });
        }
        let n = T::of(self.numel() as f64);
        let loss = {
            let (x, y) = (self.data(), targets.data());
            x.iter()
                .zip(y.iter())
                .map(|(&x, &y)| x.max(T::zero()) - x * y + (-x.abs()).exp().ln_1p())
                .sum::<T>()
                / n
        };
        let (xs, ys) = (self.clone(), targets.clone());
        Ok(Tensor::from_op(
            vec![loss],
            vec![],
            "bce_with_logits",
            vec![self.clone(), targets.clone()],
            move |g| {
                let (x, y) = (xs.data(), ys.data());
                let gx = x
                    .iter()
                    .zip(y.iter())
                    .map(|(&x, &y)| g[0] * (T::one() / (T::one() + (-x).exp()) - y) / n)
                    .collect();
                vec![Some(gx), None]
            },
        ))
    }
}

/// Concatenates tensors along `axis`; all other extents must agree.
pub fn concat<T: Real>(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidTensor("concat of an empty list".into()))?;
    check_axis("concat", axis, first.rank())?;
    for p in &parts[1..] {
        let ok = p.rank() == first.rank()
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    let (outer, _, inner) = split_at_axis(first.shape(), axis);
    let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let total: usize = extents.iter().sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (p, &e) in parts.iter().zip(&extents) {
            out.extend_from_slice(&p.data()[o * e * inner..(o + 1) * e * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Ok(Tensor::from_op(out, shape, "concat", parts.to_vec(), move |g| {
        let mut grads: Vec<Vec<T>> = extents.iter().map(|&e| Vec::with_capacity(outer * e * inner)).collect();
        let mut at = 0;
        for _ in 0..outer {
            for (gp, &e) in grads.iter_mut().zip(&extents) {
                gp.extend_from_slice(&g[at..at + e * inner]);
                at += e * inner;
            }
        }
        grads.into_iter().map(Some).collect()
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
        let n = numel_of(shape);
        Tensor::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let a = t(&[1., 2., 3., 4.], &[2, 2]);
        assert_eq!(a.matmul(&Tensor::eye(2)).unwrap().to_vec(), vec![1., 2., 3., 4.]);
        let r = t(&[1., 2.], &[1, 2]).matmul(&t(&[3., 4.], &[2, 1])).unwrap();
        assert_eq!(r.to_vec(), vec![11.0]);
        assert_eq!(r.shape(), &[1, 1]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[4, 5]);
        let c = a.matmul(&b).unwrap();
        let (ad, bd, cd) = (a.to_vec(), b.to_vec(), c.to_vec());
        for i in 0..3 {
            for j in 0..5 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += ad[i * 4 + k] * bd[k * 5 + j];
                }
                assert!((cd[i * 5 + j] - s).abs() <= 1e-12 * s.abs().max(1.0));
            }
        }
    }

    #[test]
    fn matmul_broadcasts_leading_axes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(&mut rng, &[2, 3, 4]);
        let w = random(&mut rng, &[4, 2]);
        let c = a.matmul(&w).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2]);
        let second = a.narrow(0, 1, 1).unwrap().reshape(&[3, 4]).unwrap().matmul(&w).unwrap();
        assert_eq!(&c.to_vec()[6..], &second.to_vec()[..]);
    }

    #[test]
    fn matmul_shape_errors_name_both() {
        let err = t(&[1.; 6], &[2, 3]).matmul(&t(&[1.; 6], &[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_known_values() {
        let s = t(&[0.0, 0.0], &[2]).softmax(0).unwrap().to_vec();
        assert_eq!(s, vec![0.5, 0.5]);
        let s = t(&[3f64.ln(), 0.0], &[2]).softmax(0).unwrap().to_vec();
        assert!((s[0] - 0.75).abs() < 1e-15 && (s[1] - 0.25).abs() < 1e-15);
        assert!(matches!(t(&[1.0], &[1]).softmax(1), Err(Error::InvalidAxis { .. })));
    }

    #[test]
    fn softmax_matches_direct_exp_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, &[7]).scale(4.0);
        let s = x.softmax(0).unwrap().to_vec();
        let xs = x.to_vec();
        let z: f64 = xs.iter().map(|v| v.exp()).sum();
        for (si, xi) in s.iter().zip(&xs) {
            assert!((si - xi.exp() / z).abs() < 1e-15);
        }
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let s = Tensor::<f32>::new(vec![1000.0, 1000.0], &[2])
            .unwrap()
            .softmax(0)
            .unwrap();
        assert_eq!(s.to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn broadcast_add_matches_tiling() {
        let v = t(&[1., 2., 3.], &[3]);
        let m = t(&[10., 20., 30., 40., 50., 60.], &[2, 3]);
        let tiled = t(&[1., 2., 3., 1., 2., 3.], &[2, 3]);
        assert_eq!(m.add(&v).unwrap().to_vec(), m.add(&tiled).unwrap().to_vec());
        assert_eq!(v.add(&m).unwrap().to_vec(), vec![11., 22., 33., 41., 52., 63.]);
        assert!(t(&[1., 2.], &[2]).add(&m).is_err());
    }

    #[test]
    fn broadcast_grad_reduces() {
        let v = Tensor::<f64>::param(vec![1., 2., 3.], &[1, 3]).unwrap();
        let m = Tensor::<f64>::param(vec![1.; 6], &[2, 3]).unwrap();
        m.mul(&v).unwrap().sum_all().backward().unwrap();
        assert_eq!(v.grad().unwrap(), vec![2., 2., 2.]);
        assert_eq!(m.grad().unwrap(), vec![1., 2., 3., 1., 2., 3.]);
    }

    #[test]
    fn flatten_is_row_major() {
        let x = t(&(0..24).map(f64::from).collect::<Vec<_>>(), &[2, 3, 4]);
        let f = x.flatten(1).unwrap();
        assert_eq!(f.shape(), &[2, 12]);
        assert_eq!(f.to_vec(), x.to_vec());
    }

    #[test]
    fn permute_roundtrip() {
        let x = t(&(0..24).map(f64::from).collect::<Vec<_>>(), &[2, 3, 4]);
        let p = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        // p[k, i, j] == x[i, j, k]
        assert_eq!(p.to_vec()[6 + 3 + 2], x.to_vec()[12 + 2 * 4 + 1]);
        let back = p.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
        assert!(x.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn concat_and_narrow() {
        let a = t(&[1., 2., 3., 4.], &[2, 2]);
        let b = t(&[5., 6.], &[2, 1]);
        let c = concat(&[a.clone(), b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.to_vec(), vec![1., 2., 5., 3., 4., 6.]);
        assert_eq!(c.narrow(1, 0, 2).unwrap().to_vec(), a.to_vec());
        assert!(concat(&[a, t(&[1.; 3], &[3, 1])], 1).is_err());
    }

    #[test]
    fn bce_known_values() {
        let z = t(&[0.0; 4], &[2, 2]);
        let y = t(&[1., 0., 0., 1.], &[2, 2]);
        assert!((z.bce_with_logits(&y).unwrap().item() - 2f64.ln()).abs() < 1e-15);
        let sat = t(&[20., -20., -20., 20.], &[2, 2]);
        assert!(sat.bce_with_logits(&y).unwrap().item() < 1e-6);
    }
}
