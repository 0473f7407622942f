use super::{no_grad, Tensor};
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than
/// relatively; central differences cannot resolve relative error below it.
const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (leaf index, element index) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} max_rel={:.3e} max_abs={:.3e} over {} entries (tol {:.0e}, worst leaf {} elem {})",
            if self.passed { "PASS" } else { "FAIL" },
            self.max_rel_error,
            self.max_abs_error,
            self.checked,
            self.tol,
            self.worst.0,
            self.worst.1
        )
    }
}

/// Compares autograd gradients of a scalar function against central
/// differences. `f` is re-evaluated with each leaf entry perturbed in place,
/// so it must read the leaves on every call (it may close over model
/// parameters). Leaves must be tracked (`requires_grad`).
pub fn grad_check_leaves(
    mut f: impl FnMut() -> Result<Tensor<f64>>,
    leaves: &[Tensor<f64>],
    tol: f64,
) -> Result<GradCheckReport> {
    for l in leaves {
        l.zero_grad();
    }
    f()?.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();

    let mut eval = |leaf: &Tensor<f64>, i: usize, v: f64| -> Result<f64> {
        leaf.data_mut()[i] = v;
        no_grad(&mut f).map(|t| t.item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        checked: 0,
        tol,
        passed: true,
    };
    for (li, leaf) in leaves.iter().enumerate() {
        for (i, &a) in analytic[li].iter().enumerate() {
            let x0 = leaf.data()[i];
            let plus = eval(leaf, i, x0 + FD_STEP)?;
            let minus = eval(leaf, i, x0 - FD_STEP)?;
            leaf.data_mut()[i] = x0;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst = (li, i);
            }
            report.checked += 1;
        }
    }
    for l in leaves {
        l.zero_grad();
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}

/// Single-input convenience wrapper: checks `d f(x) / dx` at `x`.
pub fn grad_check(
    f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
    x: &Tensor<f64>,
    tol: f64,
) -> Result<GradCheckReport> {
    let leaf = x.as_leaf(true);
    let l2 = leaf.clone();
    grad_check_leaves(move || f(&l2), &[leaf], tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::new(vec![0.3, -1.2, 4.0, 2.5], &[2, 2]).unwrap();
        let r = grad_check(|x| Ok(x.sum_all()), &x, 1e-9).unwrap();
        // exact up to the rounding of x ± h
        assert!(r.max_rel_error < 1e-9, "{r}");
        assert!(r.passed);
    }

    #[test]
    fn tanh_sum_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::new((0..10).map(|_| rng.random_range(-2.0..2.0)).collect(), &[10]).unwrap();
        let r = grad_check(|x| Ok(x.tanh().sum_all()), &x, 1e-4).unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu on entries straddling zero within one step is flagged as a kink
        let x = Tensor::new(vec![1e-6, -1e-6], &[2]).unwrap();
        let r = grad_check(|x| Ok(x.relu().sum_all()), &x, 1e-4).unwrap();
        assert!(!r.passed);
    }
}
