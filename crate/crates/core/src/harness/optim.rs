//! Adam with bias correction.

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub struct Adam<T: Real> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    /// Moments are zero-initialized with the shapes of `params`.
    pub fn new(params: &[Tensor<T>], cfg: &TrainConfig) -> Self {
        Adam {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    /// One update with explicit gradients, one vector per parameter.
    pub fn update(&mut self, params: &[Tensor<T>], grads: &[Vec<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: vec![self.m.len()],
                rhs: vec![params.len(), grads.len()],
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.numel() != g.len() || p.numel() != m.len() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
        }
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.step as i32));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        let one = T::one();
        for (((p, g), m), v) in params.iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let mut data = p.data_mut();
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Update from the gradients accumulated on the parameters; a parameter
    /// without a gradient is treated as having a zero one.
    pub fn step(&mut self, params: &[Tensor<T>]) -> Result<()> {
        let grads: Vec<Vec<T>> = params
            .iter()
            .map(|p| p.grad().unwrap_or_else(|| vec![T::zero(); p.numel()]))
            .collect();
        self.update(params, &grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let p = Tensor::<f64>::param(vec![0.5, -1.5], &[2]).unwrap();
        let mut opt = Adam::new(std::slice::from_ref(&p), &TrainConfig::default());
        opt.update(std::slice::from_ref(&p), &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(p.to_vec(), vec![0.5, -1.5]);
        assert_eq!(opt.m[0], vec![0.0, 0.0]);
        assert_eq!(opt.v[0], vec![0.0, 0.0]);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let p = Tensor::<f64>::param(vec![2.0], &[1]).unwrap();
        let mut opt = Adam::new(std::slice::from_ref(&p), &TrainConfig::default());
        opt.update(std::slice::from_ref(&p), &[vec![1.0]]).unwrap();
        let moved = 2.0 - p.item();
        assert!((moved - 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = Tensor::<f64>::param(vec![2.0, 1.0], &[2]).unwrap();
        let mut opt = Adam::new(std::slice::from_ref(&p), &TrainConfig::default());
        assert!(opt.update(std::slice::from_ref(&p), &[vec![1.0]]).is_err());
    }

    #[test]
    fn quadratic_descends_monotonically_after_warmup() {
        let w = Tensor::<f64>::param(vec![1.0], &[1]).unwrap();
        let mut opt = Adam::new(std::slice::from_ref(&w), &TrainConfig::default());
        let mut prev = f64::INFINITY;
        for step in 0..100 {
            w.zero_grad();
            w.mul(&w).unwrap().sum_all().backward().unwrap();
            opt.step(std::slice::from_ref(&w)).unwrap();
            let now = w.item().abs();
            if step >= 1 {
                assert!(now < prev);
            }
            prev = now;
        }
        assert!(prev < 1.0);
    }
}
