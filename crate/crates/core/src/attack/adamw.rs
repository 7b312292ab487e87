use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Result};
use crate::scalar::Scalar;

/// Hyperparameters of the decoupled-weight-decay Adam update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self { learning_rate, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub step: u64,
}

impl<S: Scalar> AdamWState<S> {
    pub fn zeros(len: usize) -> Self {
        Self { m: vec![S::zero(); len], v: vec![S::zero(); len], step: 0 }
    }
}

/// One AdamW step:
/// `theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)`.
pub fn adamw_update<S: Scalar>(params: &mut [S], grads: &[S], state: &mut AdamWState<S>, opt: &AdamW) -> Result<()> {
    check_len(params.len(), grads.len())?;
    check_len(params.len(), state.m.len())?;
    check_len(params.len(), state.v.len())?;
    state.step += 1;
    let step = state.step as i32;
    let (b1, b2) = (S::lit(opt.beta1), S::lit(opt.beta2));
    let (one_m_b1, one_m_b2) = (S::lit(1.0 - opt.beta1), S::lit(1.0 - opt.beta2));
    let bc1 = S::lit(1.0 - num_traits::Float::powi(opt.beta1, step));
    let bc2 = S::lit(1.0 - num_traits::Float::powi(opt.beta2, step));
    let (lr, wd, eps) = (S::lit(opt.learning_rate), S::lit(opt.weight_decay), S::lit(opt.eps));
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + one_m_b1 * g;
        *v = b2 * *v + one_m_b2 * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = vec![0.3f64, -1.2];
        let mut st = AdamWState::zeros(2);
        adamw_update(&mut p, &[0.0, 0.0], &mut st, &AdamW::new(0.1, 0.0)).unwrap();
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn first_step_scalar() {
        let mut p = vec![1.0f64];
        let mut st = AdamWState::zeros(1);
        adamw_update(&mut p, &[1.0], &mut st, &AdamW::new(0.1, 0.0)).unwrap();
        // m_hat = v_hat = 1 on the first step
        assert!((p[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn decay_only_step() {
        let mut p = vec![1.0f64];
        let mut st = AdamWState::zeros(1);
        adamw_update(&mut p, &[0.0], &mut st, &AdamW::new(0.1, 0.01)).unwrap();
        assert!((p[0] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        let mut p = vec![1.0f64; 2];
        let mut st = AdamWState::zeros(2);
        assert!(adamw_update(&mut p, &[0.0], &mut st, &AdamW::new(0.1, 0.0)).is_err());
    }
}
