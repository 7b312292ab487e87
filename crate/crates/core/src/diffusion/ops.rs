//! Closed-form DDIM arithmetic.
//!
//! Each operation is affine in `(x_t, eps)`, so its vector-Jacobian product is
//! a pair of scalar coefficients; [`AffineStep`] carries them for backprop.

// Float math for `no_std` builds; std's inherent methods shadow it when std is linked.
#[allow(unused_imports)]
use num_traits::Float;
use super::NoiseSchedule;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `out = x_coeff * x_t + eps_coeff * eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineStep {
    pub x_coeff: f64,
    pub eps_coeff: f64,
}

impl AffineStep {
    pub fn apply<S: Scalar>(&self, x_t: &Tensor<S>, eps: &Tensor<S>) -> Result<Tensor<S>> {
        let (a, b) = (S::lit(self.x_coeff), S::lit(self.eps_coeff));
        x_t.zip_map(eps, |x, e| a * x + b * e)
    }

    /// Gradient of a scalar loss with respect to `(x_t, eps)` given its
    /// gradient with respect to the output.
    pub fn vjp<S: Scalar>(&self, grad_out: &Tensor<S>) -> (Tensor<S>, Tensor<S>) {
        let (a, b) = (S::lit(self.x_coeff), S::lit(self.eps_coeff));
        (grad_out.map(|g| g * a), grad_out.map(|g| g * b))
    }
}

/// Coefficients of `x0 = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)`.
pub fn x0_coefficients(schedule: &NoiseSchedule, t: usize) -> Result<AffineStep> {
    if t == 0 {
        return Err(Error::InvalidArgument("x0 prediction needs t >= 1".into()));
    }
    let abar = schedule.alpha_bar(t)?;
    let s = abar.sqrt();
    Ok(AffineStep { x_coeff: 1.0 / s, eps_coeff: -(1.0 - abar).sqrt() / s })
}

/// Deterministic DDIM transition written in terms of two cumulative alphas.
pub fn ddim_coefficients_from(abar_t: f64, abar_prev: f64) -> AffineStep {
    let s = abar_t.sqrt();
    let sp = abar_prev.sqrt();
    AffineStep {
        x_coeff: sp / s,
        eps_coeff: (1.0 - abar_prev).sqrt() - sp * (1.0 - abar_t).sqrt() / s,
    }
}

pub fn ddim_coefficients(schedule: &NoiseSchedule, t: usize, t_prev: usize) -> Result<AffineStep> {
    if t_prev >= t {
        return Err(Error::InvalidArgument(alloc::format!(
            "DDIM step needs t_prev < t, got t={t}, t_prev={t_prev}"
        )));
    }
    Ok(ddim_coefficients_from(schedule.alpha_bar(t)?, schedule.alpha_bar(t_prev)?))
}

/// `sqrt(abar_t) x0 + sqrt(1 - abar_t) noise`.
pub fn forward_diffuse<S: Scalar>(
    x0: &Tensor<S>,
    t: usize,
    noise: &Tensor<S>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<S>> {
    let abar = schedule.alpha_bar(t)?;
    AffineStep { x_coeff: abar.sqrt(), eps_coeff: (1.0 - abar).sqrt() }.apply(x0, noise)
}

pub fn predict_x0<S: Scalar>(
    x_t: &Tensor<S>,
    eps_pred: &Tensor<S>,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Tensor<S>> {
    x0_coefficients(schedule, t)?.apply(x_t, eps_pred)
}

/// One deterministic DDIM update from `t` to `t_prev`.
///
/// Computed as `sqrt(abar_prev) * x0 + sqrt(1 - abar_prev) * eps` with the
/// intermediate `x0` prediction kept explicit.
pub fn ddim_step<S: Scalar>(
    x_t: &Tensor<S>,
    eps_pred: &Tensor<S>,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
) -> Result<Tensor<S>> {
    if t_prev >= t {
        return Err(Error::InvalidArgument(alloc::format!(
            "DDIM step needs t_prev < t, got t={t}, t_prev={t_prev}"
        )));
    }
    let x0 = predict_x0(x_t, eps_pred, t, schedule)?;
    let abar_prev = schedule.alpha_bar(t_prev)?;
    AffineStep { x_coeff: abar_prev.sqrt(), eps_coeff: (1.0 - abar_prev).sqrt() }.apply(&x0, eps_pred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap()
    }

    fn oracle_abar(t: usize) -> f64 {
        (1..=t).map(|i| 1.0 - (1e-4 + (0.02 - 1e-4) * (i - 1) as f64 / 999.0)).product()
    }

    #[test]
    fn t_zero_is_identity() {
        let s = sched();
        let x0 = Tensor::<f64>::standard_normal(&[1, 3, 3], 1);
        let n = Tensor::<f64>::standard_normal(&[1, 3, 3], 2);
        assert_eq!(forward_diffuse(&x0, 0, &n, &s).unwrap(), x0);
    }

    #[test]
    fn quarter_alpha_scalar_case() {
        let s = NoiseSchedule::from_betas(vec![0.5, 0.5]).unwrap();
        let x0 = Tensor::new(&[1], vec![1.0f64]).unwrap();
        let n = Tensor::new(&[1], vec![0.0f64]).unwrap();
        assert_eq!(forward_diffuse(&x0, 2, &n, &s).unwrap().data(), &[0.5]);
    }

    #[test]
    fn forward_matches_formula_oracle() {
        let s = sched();
        let x0 = Tensor::<f64>::standard_normal(&[1, 4, 4], 3);
        let n = Tensor::<f64>::standard_normal(&[1, 4, 4], 4);
        let out = forward_diffuse(&x0, 7, &n, &s).unwrap();
        let a = oracle_abar(7);
        for i in 0..out.len() {
            let want = a.sqrt() * x0[i] + (1.0 - a).sqrt() * n[i];
            assert!((out[i] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn predict_x0_cases() {
        let s = sched();
        let x = Tensor::<f64>::standard_normal(&[1, 4, 4], 5);
        let zero = Tensor::zeros(&[1, 4, 4]);
        let out = predict_x0(&x, &zero, 300, &s).unwrap();
        let a = s.alpha_bar(300).unwrap();
        for i in 0..out.len() {
            assert!((out[i] - x[i] / a.sqrt()).abs() < 1e-12);
        }
        assert!(predict_x0(&x, &zero, 0, &s).is_err());

        let e = Tensor::<f64>::standard_normal(&[1, 4, 4], 6);
        let xt = forward_diffuse(&x, 500, &e, &s).unwrap();
        let back = predict_x0(&xt, &e, 500, &s).unwrap();
        for i in 0..back.len() {
            assert!((back[i] - x[i]).abs() <= 1e-6 * x[i].abs().max(1e-3));
        }
    }

    #[test]
    fn ddim_zero_eps_reduces_to_ratio() {
        let s = sched();
        let x = Tensor::<f64>::standard_normal(&[1, 4, 4], 7);
        let zero = Tensor::zeros(&[1, 4, 4]);
        let out = ddim_step(&x, &zero, 10, 4, &s).unwrap();
        let r = (s.alpha_bar(4).unwrap() / s.alpha_bar(10).unwrap()).sqrt();
        for i in 0..out.len() {
            assert!((out[i] - r * x[i]).abs() < 1e-12);
        }
        assert!(ddim_step(&x, &zero, 4, 4, &s).is_err());
        assert!(ddim_step(&x, &zero, 4, 9, &s).is_err());
    }

    #[test]
    fn equal_alpha_transition_is_identity_for_zero_eps() {
        let c = ddim_coefficients_from(0.3, 0.3);
        assert!((c.x_coeff - 1.0).abs() < 1e-15);
        assert!(c.eps_coeff.abs() < 1e-15);
    }

    #[test]
    fn ddim_random_case_matches_formula() {
        let s = sched();
        let x = Tensor::<f64>::standard_normal(&[1, 4, 4], 8);
        let e = Tensor::<f64>::standard_normal(&[1, 4, 4], 9);
        let out = ddim_step(&x, &e, 10, 4, &s).unwrap();
        let (at, ap) = (oracle_abar(10), oracle_abar(4));
        for i in 0..out.len() {
            let x0 = (x[i] - (1.0 - at).sqrt() * e[i]) / at.sqrt();
            let want = ap.sqrt() * x0 + (1.0 - ap).sqrt() * e[i];
            assert!((out[i] - want).abs() <= 1e-10 * want.abs().max(1.0));
        }
        // affine coefficients describe the same map
        let c = ddim_coefficients(&s, 10, 4).unwrap();
        let viac = c.apply(&x, &e).unwrap();
        for i in 0..out.len() {
            assert!((out[i] - viac[i]).abs() <= 1e-10 * out[i].abs().max(1.0));
        }
    }

    #[test]
    fn vjp_matches_central_differences() {
        let s = sched();
        let x = Tensor::<f64>::standard_normal(&[1, 3, 3], 10);
        let e = Tensor::<f64>::standard_normal(&[1, 3, 3], 11);
        let w = Tensor::<f64>::standard_normal(&[1, 3, 3], 12);
        // scalar objective: sum_i w_i * out_i^2
        let objective = |eps: &Tensor<f64>, f: &dyn Fn(&Tensor<f64>) -> Tensor<f64>| -> f64 {
            let o = f(eps);
            o.data().iter().zip(w.data()).map(|(a, b)| a * a * b).sum()
        };
        type StepFn<'a> = (&'a dyn Fn(&Tensor<f64>) -> Tensor<f64>, AffineStep);
        let px = |eps: &Tensor<f64>| predict_x0(&x, eps, 40, &s).unwrap();
        let dd = |eps: &Tensor<f64>| ddim_step(&x, eps, 40, 39, &s).unwrap();
        let cases: Vec<StepFn> =
            vec![(&px, x0_coefficients(&s, 40).unwrap()), (&dd, ddim_coefficients(&s, 40, 39).unwrap())];
        for (f, coeffs) in cases {
            let out = f(&e);
            let grad_out = out.zip_map(&w, |o, wi| 2.0 * o * wi).unwrap();
            let (_, g_eps) = coeffs.vjp(&grad_out);
            let h = 1e-6;
            for i in 0..e.len() {
                let mut ep = e.clone();
                ep[i] += h;
                let mut em = e.clone();
                em[i] -= h;
                let fd = (objective(&ep, f) - objective(&em, f)) / (2.0 * h);
                assert!((fd - g_eps[i]).abs() <= 1e-3 * fd.abs().max(1e-6), "{fd} vs {}", g_eps[i]);
            }
        }
    }
}
