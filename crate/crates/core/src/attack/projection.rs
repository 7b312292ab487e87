//! L2-ball geometry around the reference parameters.
//!
//! Inner products and norms are accumulated in `f64` whatever the storage
//! type, so `f32` models get the same containment guarantees as `f64` ones.

// Float math for `no_std` builds; std's inherent methods shadow it when std is linked.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;

use crate::error::{check_len, Result};
use crate::scalar::Scalar;

fn dot64<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.as_f64() * y.as_f64()).sum()
}

pub fn l2_norm<S: Scalar>(v: &[S]) -> f64 {
    dot64(v, v).sqrt()
}

/// Flattened copy of the reference parameters plus the last measured
/// distance `||theta - theta_0||`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaTracker<S> {
    reference: Vec<S>,
    current_delta_norm: f64,
}

impl<S: Scalar> DeltaTracker<S> {
    pub fn new(reference: &[S]) -> Self {
        Self { reference: reference.to_vec(), current_delta_norm: 0.0 }
    }

    pub fn reference(&self) -> &[S] {
        &self.reference
    }

    pub fn current_delta_norm(&self) -> f64 {
        self.current_delta_norm
    }

    /// `theta - theta_0`, elementwise in storage precision.
    pub fn delta(&self, params: &[S]) -> Result<Vec<S>> {
        check_len(self.reference.len(), params.len())?;
        Ok(params.iter().zip(&self.reference).map(|(&p, &r)| p - r).collect())
    }

    /// `||theta - theta_0||_2` evaluated in `f64`.
    pub fn distance(&self, params: &[S]) -> Result<f64> {
        check_len(self.reference.len(), params.len())?;
        Ok(params
            .iter()
            .zip(&self.reference)
            .map(|(&p, &r)| {
                let d = p.as_f64() - r.as_f64();
                d * d
            })
            .sum::<f64>()
            .sqrt())
    }

    /// Recomputes and stores the current distance.
    pub fn refresh(&mut self, params: &[S]) -> Result<f64> {
        self.current_delta_norm = self.distance(params)?;
        Ok(self.current_delta_norm)
    }
}

/// Removes the component of `g` along `d` once `||d|| > boundary_fraction * eta`.
///
/// Returns the (possibly unchanged) gradient and whether the projection fired.
pub fn project_gradient<S: Scalar>(g: &[S], d: &[S], eta: f64, boundary_fraction: f64) -> Result<(Vec<S>, bool)> {
    check_len(g.len(), d.len())?;
    let dd = dot64(d, d);
    let dn = dd.sqrt();
    if !(dn > boundary_fraction * eta) || dd == 0.0 {
        return Ok((g.to_vec(), false));
    }
    let coeff = dot64(g, d) / dd;
    Ok((g.iter().zip(d).map(|(&gi, &di)| S::lit(gi.as_f64() - coeff * di.as_f64())).collect(), true))
}

/// Rescales `g` to norm `clip_norm` when it is longer; otherwise returns it unchanged.
pub fn clip_gradient<S: Scalar>(g: &[S], clip_norm: f64) -> Vec<S> {
    let n = l2_norm(g);
    if n > clip_norm {
        let s = clip_norm / n;
        g.iter().map(|&v| S::lit(v.as_f64() * s)).collect()
    } else {
        g.to_vec()
    }
}

/// Radially retracts `params` onto the ball of radius `eta` around the
/// tracker's reference when they lie outside it. Returns whether it fired.
///
/// The rescaling is computed in `f64`; if rounding back to the storage type
/// leaves the point marginally outside, the target radius is nudged inward
/// until the stored parameters satisfy `||theta - theta_0|| <= eta`.
pub fn project_parameters<S: Scalar>(params: &mut [S], tracker: &mut DeltaTracker<S>, eta: f64) -> Result<bool> {
    let norm = tracker.distance(params)?;
    if norm <= eta {
        tracker.current_delta_norm = norm;
        return Ok(false);
    }
    let delta: Vec<f64> = params.iter().zip(&tracker.reference).map(|(&p, &r)| p.as_f64() - r.as_f64()).collect();
    let mut radius = eta;
    for attempt in 0..64 {
        let s = radius / norm;
        for ((p, &r), &d) in params.iter_mut().zip(&tracker.reference).zip(&delta) {
            *p = S::lit(r.as_f64() + d * s);
        }
        let after = tracker.distance(params)?;
        if after <= eta {
            tracker.current_delta_norm = after;
            return Ok(true);
        }
        radius = eta * (1.0 - 2.0 * f64::EPSILON * (1u64 << attempt.min(52)) as f64);
    }
    tracker.current_delta_norm = tracker.distance(params)?;
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn gradient_projection_cases() {
        let eta = 1.0;
        let (g, fired) = project_gradient(&[1.0f64, 2.0], &[0.5, 0.0], eta, 0.98).unwrap();
        assert!(!fired);
        assert_eq!(g, vec![1.0, 2.0]);

        let d = [0.99 * 0.6, 0.99 * 0.8];
        let (g, fired) = project_gradient(&[0.6f64 * 3.0, 0.8 * 3.0], &d, eta, 0.98).unwrap();
        assert!(fired);
        assert!(l2_norm(&g) < 1e-12);

        let c = 0.99 * eta / 2f64.sqrt();
        let (g, fired) = project_gradient(&[1.0f64, 0.0], &[c, c], eta, 0.98).unwrap();
        assert!(fired);
        assert!((g[0] - 0.5).abs() < 1e-12 && (g[1] + 0.5).abs() < 1e-12);

        let (g, fired) = project_gradient(&[1.0f64, 0.0], &[0.0, 0.0], eta, 0.98).unwrap();
        assert!(!fired);
        assert_eq!(g, vec![1.0, 0.0]);
        assert!(project_gradient(&[1.0f64], &[0.0, 0.0], eta, 0.98).is_err());
    }

    #[test]
    fn clipping_cases() {
        assert_eq!(clip_gradient(&[0.3f64, 0.0], 1.0), vec![0.3, 0.0]);
        let g = clip_gradient(&[3.0f64, 4.0], 1.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn parameter_projection_cases() {
        let mut t = DeltaTracker::new(&[0.0f64, 0.0]);
        let mut p = vec![3.0, 4.0];
        assert!(project_parameters(&mut p, &mut t, 1.0).unwrap());
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);

        let mut inside = vec![0.24, 0.32];
        assert!(!project_parameters(&mut inside, &mut t, 1.0).unwrap());
        assert_eq!(inside, vec![0.24, 0.32]);
        assert!((t.current_delta_norm() - 0.4).abs() < 1e-15);

        let mut boundary = vec![0.6, 0.8];
        project_parameters(&mut boundary, &mut t, 1.0).unwrap();
        assert!((boundary[0] - 0.6).abs() < 1e-15 && (boundary[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn f32_projection_lands_inside() {
        let reference: Vec<f32> = (0..5000).map(|i| ((i * 37 % 101) as f32 - 50.0) * 0.013).collect();
        let mut params: Vec<f32> = reference.iter().enumerate().map(|(i, r)| r + ((i % 7) as f32 - 3.0) * 1e-3).collect();
        let mut t = DeltaTracker::new(&reference);
        let eta = 0.05;
        assert!(project_parameters(&mut params, &mut t, eta).unwrap());
        let after = t.distance(&params).unwrap();
        // f32 rounding of ~1e-3 deltas costs a few ppm of radius
        assert!(after <= eta && after > eta * (1.0 - 1e-4), "{after}");
    }
}
