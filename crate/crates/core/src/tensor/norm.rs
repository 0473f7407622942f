use rand::Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Added to variances before the square root in both normalizations.
pub const NORM_EPS: f64 = 1e-5;

fn check_affine<T: Real>(op: &'static str, p: Option<&Tensor<T>>, width: usize) -> Result<()> {
    match p {
        Some(p) if p.shape() != [width] => Err(Error::ShapeMismatch {
            op,
            lhs: vec![width],
            rhs: p.shape().to_vec(),
        }),
        _ => Ok(()),
    }
}

/// Shared backward of a normalization over groups of `m` elements:
/// `gx = inv/m · (m·ĝ − Σĝ − x̂·Σ(ĝ·x̂))` with `ĝ = g·γ`.
fn normalized_grad<'a, T: Real>(gxhat: &'a [T], xhat: &'a [T], inv: T) -> impl Iterator<Item = T> + 'a {
    let m = T::of(gxhat.len() as f64);
    let s1: T = gxhat.iter().copied().sum();
    let s2: T = gxhat.iter().zip(xhat).map(|(&a, &b)| a * b).sum();
    gxhat
        .iter()
        .zip(xhat)
        .map(move |(&gh, &xh)| inv / m * (m * gh - s1 - xh * s2))
}

/// Normalizes over the last axis with population variance, then applies the
/// optional affine `γ·x̂ + β`.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gamma: Option<&Tensor<T>>,
    beta: Option<&Tensor<T>>,
    eps: f64,
) -> Result<Tensor<T>> {
    let width = *x
        .shape()
        .last()
        .ok_or_else(|| Error::InvalidTensor("layer_norm of a rank-0 tensor".into()))?;
    check_affine("layer_norm", gamma, width)?;
    check_affine("layer_norm", beta, width)?;
    let rows = x.numel() / width;
    let eps = T::of(eps);

    let mut xhat = vec![T::zero(); x.numel()];
    let mut invs = Vec::with_capacity(rows);
    {
        let d = x.data();
        let n = T::of(width as f64);
        for r in 0..rows {
            let row = &d[r * width..][..width];
            let mu = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            for (o, &v) in xhat[r * width..][..width].iter_mut().zip(row) {
                *o = (v - mu) * inv;
            }
            invs.push(inv);
        }
    }
    let gd = gamma.map(|g| g.to_vec());
    let bd = beta.map(|b| b.to_vec());
    let out: Vec<T> = xhat
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let j = i % width;
            let v = gd.as_ref().map_or(v, |g| v * g[j]);
            bd.as_ref().map_or(v, |b| v + b[j])
        })
        .collect();

    let mut inputs = vec![x.clone()];
    inputs.extend(gamma.cloned());
    inputs.extend(beta.cloned());
    let (has_g, has_b) = (gamma.is_some(), beta.is_some());
    Ok(Tensor::from_op(
        out,
        x.shape().to_vec(),
        "layer_norm",
        inputs,
        move |g| {
            let mut gx = Vec::with_capacity(g.len());
            let mut gg = vec![T::zero(); width];
            let mut gb = vec![T::zero(); width];
            for r in 0..rows {
                let gr = &g[r * width..][..width];
                let xr = &xhat[r * width..][..width];
                let gxhat: Vec<T> = match &gd {
                    Some(gm) => gr.iter().zip(gm).map(|(&a, &b)| a * b).collect(),
                    None => gr.to_vec(),
                };
                gx.extend(normalized_grad(&gxhat, xr, invs[r]));
                for j in 0..width {
                    gg[j] += gr[j] * xr[j];
                    gb[j] += gr[j];
                }
            }
            let mut res = vec![Some(gx)];
            if has_g {
                res.push(Some(gg));
            }
            if has_b {
                res.push(Some(gb));
            }
            res
        },
    ))
}

/// Running statistics of a batch-norm layer. Both tensors are untracked
/// buffers updated in place during train-mode calls.
#[derive(Clone, Debug)]
pub struct BatchNormState<T: Real> {
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum: 0.1,
            eps: NORM_EPS,
        }
    }
}

/// Per-channel normalization of `batch × channels × …`. Train mode uses batch
/// statistics and updates the running estimates
/// (`r ← (1−momentum)·r + momentum·batch_stat`, unbiased variance); eval mode
/// normalizes with the running estimates.
pub fn batch_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &BatchNormState<T>,
    train: bool,
) -> Result<Tensor<T>> {
    if x.rank() < 2 {
        return Err(Error::InvalidTensor(format!(
            "batch_norm expects batch × channels × …, got {:?}",
            x.shape()
        )));
    }
    let (bn, c) = (x.shape()[0], x.shape()[1]);
    let sp: usize = x.shape()[2..].iter().product();
    check_affine("batch_norm", Some(gamma), c)?;
    check_affine("batch_norm", Some(beta), c)?;
    check_affine("batch_norm", Some(&state.running_mean), c)?;
    let eps = T::of(state.eps);
    let m = bn * sp;
    let at = move |ch: usize, k: usize| (k / sp * c + ch) * sp + k % sp;

    let (mut mean, mut inv) = (vec![T::zero(); c], vec![T::zero(); c]);
    {
        let d = x.data();
        if train {
            let mom = T::of(state.momentum);
            let mut rm = state.running_mean.data_mut();
            let mut rv = state.running_var.data_mut();
            let mf = T::of(m as f64);
            for ch in 0..c {
                let mu = (0..m).map(|k| d[at(ch, k)]).sum::<T>() / mf;
                let var = (0..m).map(|k| (d[at(ch, k)] - mu).powi(2)).sum::<T>() / mf;
                mean[ch] = mu;
                inv[ch] = T::one() / (var + eps).sqrt();
                let unbiased = if m > 1 { var * mf / T::of((m - 1) as f64) } else { var };
                rm[ch] = (T::one() - mom) * rm[ch] + mom * mu;
                rv[ch] = (T::one() - mom) * rv[ch] + mom * unbiased;
            }
        } else {
            let (rm, rv) = (state.running_mean.data(), state.running_var.data());
            for ch in 0..c {
                mean[ch] = rm[ch];
                inv[ch] = T::one() / (rv[ch] + eps).sqrt();
            }
        }
    }

    let xhat: Vec<T> = {
        let d = x.data();
        (0..d.len())
            .map(|i| {
                let ch = (i / sp) % c;
                (d[i] - mean[ch]) * inv[ch]
            })
            .collect()
    };
    let out = {
        let (gd, bd) = (gamma.data(), beta.data());
        xhat.iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / sp) % c;
                v * gd[ch] + bd[ch]
            })
            .collect()
    };

    let gm = gamma.clone();
    Ok(Tensor::from_op(
        out,
        x.shape().to_vec(),
        "batch_norm",
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |g| {
            let gamma = gm.data();
            let mut gx = vec![T::zero(); g.len()];
            let mut gg = vec![T::zero(); c];
            let mut gb = vec![T::zero(); c];
            for ch in 0..c {
                let idx: Vec<usize> = (0..m).map(|k| at(ch, k)).collect();
                for &i in &idx {
                    gg[ch] += g[i] * xhat[i];
                    gb[ch] += g[i];
                }
                if train {
                    let gxhat: Vec<T> = idx.iter().map(|&i| g[i] * gamma[ch]).collect();
                    let xh: Vec<T> = idx.iter().map(|&i| xhat[i]).collect();
                    for (&i, v) in idx.iter().zip(normalized_grad(&gxhat, &xh, inv[ch])) {
                        gx[i] = v;
                    }
                } else {
                    for &i in &idx {
                        gx[i] = g[i] * gamma[ch] * inv[ch];
                    }
                }
            }
            vec![Some(gx), Some(gg), Some(gb)]
        },
    ))
}

/// Inverted dropout: in train mode each entry is zeroed with probability `p`
/// and survivors are scaled by `1/(1−p)`. Eval mode and `p = 0` return `x`
/// itself.
pub fn dropout<T: Real, R: Rng + ?Sized>(x: &Tensor<T>, p: f64, train: bool, rng: &mut R) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidProbability(p));
    }
    if !train || p == 0.0 {
        return Ok(x.clone());
    }
    let scale = T::of(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.numel())
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { scale })
        .collect();
    let out = x.data().iter().zip(&mask).map(|(&v, &k)| v * k).collect();
    Ok(Tensor::from_op(
        out,
        x.shape().to_vec(),
        "dropout",
        vec![x.clone()],
        move |g| vec![Some(g.iter().zip(&mask).map(|(&a, &k)| a * k).collect())],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(v: &[f64], s: &[usize]) -> Tensor<f64> {
        Tensor::new(v.to_vec(), s).unwrap()
    }

    #[test]
    fn layer_norm_known_rows() {
        let g = Tensor::ones(&[3]);
        let b = Tensor::zeros(&[3]);
        let c = layer_norm(&t(&[5., 5., 5.], &[1, 3]), Some(&g), Some(&b), NORM_EPS).unwrap();
        assert_eq!(c.to_vec(), vec![0., 0., 0.]);
        let y = layer_norm(&t(&[1., 3.], &[1, 2]), None, None, NORM_EPS)
            .unwrap()
            .to_vec();
        // population variance 1; epsilon shifts the result by ~5e-6
        assert!((y[0] + 1.0).abs() < 1e-5 && (y[1] - 1.0).abs() < 1e-5, "{y:?}");
    }

    #[test]
    fn layer_norm_rejects_wrong_affine() {
        let x = t(&[1., 2., 3.], &[1, 3]);
        assert!(layer_norm(&x, Some(&Tensor::ones(&[2])), None, NORM_EPS).is_err());
    }

    #[test]
    fn batch_norm_train_moments_and_running_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..4 * 3 * 5).map(|_| rng.random_range(-2.0..3.0)).collect();
        let x = t(&data, &[4, 3, 5]);
        let st = BatchNormState::<f64>::new(3);
        let y = batch_norm(&x, &Tensor::ones(&[3]), &Tensor::zeros(&[3]), &st, true).unwrap();
        let yd = y.to_vec();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| (0..5).map(move |s| (n * 3 + ch) * 5 + s))
                .map(|i| yd[i])
                .collect();
            let mu = vals.iter().sum::<f64>() / 20.0;
            let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 20.0;
            assert!(mu.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);

            let raw: Vec<f64> = (0..4)
                .flat_map(|n| (0..5).map(move |s| (n * 3 + ch) * 5 + s))
                .map(|i| data[i])
                .collect();
            let rmu = raw.iter().sum::<f64>() / 20.0;
            let rvar = raw.iter().map(|v| (v - rmu).powi(2)).sum::<f64>() / 19.0;
            assert!((st.running_mean.data()[ch] - 0.1 * rmu).abs() < 1e-12);
            assert!((st.running_var.data()[ch] - (0.9 + 0.1 * rvar)).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_norm_eval_uses_running_stats() {
        let st = BatchNormState::<f64>::new(1);
        st.running_mean.data_mut()[0] = 2.0;
        st.running_var.data_mut()[0] = 4.0;
        let x = t(&[2., 4.], &[2, 1]);
        let y = batch_norm(&x, &Tensor::ones(&[1]), &Tensor::zeros(&[1]), &st, false).unwrap();
        let expect = 2.0 / (4.0 + NORM_EPS).sqrt();
        assert_eq!(y.to_vec()[0], 0.0);
        assert!((y.to_vec()[1] - expect).abs() < 1e-15);
        assert_eq!(st.running_mean.data()[0], 2.0);
    }

    #[test]
    fn dropout_identities_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = t(&[1., -2., 3.], &[3]);
        assert!(dropout(&x, 0.5, false, &mut rng).unwrap().same_tensor(&x));
        assert_eq!(dropout(&x, 0.0, true, &mut rng).unwrap().to_vec(), x.to_vec());
        assert!(matches!(
            dropout(&x, 1.0, true, &mut rng),
            Err(Error::InvalidProbability(_))
        ));
        assert!(dropout(&x, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let x = Tensor::<f64>::ones(&[100_000]);
        let y = dropout(&x, 0.5, true, &mut rng).unwrap().to_vec();
        let alive = y.iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
        let mean = y.iter().sum::<f64>() / 1e5;
        assert!((alive - 0.5).abs() < 0.01 * 0.5, "{alive}");
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }
}
