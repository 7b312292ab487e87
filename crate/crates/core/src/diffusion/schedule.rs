use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Variance schedule of the forward process.
///
/// `betas[i]` holds beta for step `i + 1`; `alphas_cumprod[t]` is the product
/// of `1 - beta` over steps `1..=t`, so `alphas_cumprod[0] == 1` stands for the
/// clean image.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas_cumprod: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleKind {
    #[default]
    Linear,
}

impl NoiseSchedule {
    pub fn build(num_train_steps: usize, beta_start: f64, beta_end: f64, kind: ScheduleKind) -> Result<Self> {
        if num_train_steps == 0 {
            return Err(Error::InvalidArgument("num_train_steps must be positive".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "betas must satisfy 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas = match kind {
            ScheduleKind::Linear => {
                if num_train_steps == 1 {
                    alloc::vec![beta_start]
                } else {
                    let span = (num_train_steps - 1) as f64;
                    (0..num_train_steps)
                        .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
                        .collect()
                }
            }
        };
        Self::from_betas(betas)
    }

    pub fn linear(num_train_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        Self::build(num_train_steps, beta_start, beta_end, ScheduleKind::Linear)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("num_train_steps must be positive".into()));
        }
        if let Some((i, b)) = betas.iter().enumerate().find(|(_, b)| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidArgument(format!("beta[{}] = {b} is outside (0, 1)", i + 1)));
        }
        let mut alphas_cumprod = Vec::with_capacity(betas.len() + 1);
        let mut acc = 1.0f64;
        alphas_cumprod.push(acc);
        for b in &betas {
            acc *= 1.0 - b;
            alphas_cumprod.push(acc);
        }
        Ok(Self { betas, alphas_cumprod })
    }

    pub fn num_train_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas_cumprod(&self) -> &[f64] {
        &self.alphas_cumprod
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alphas_cumprod
            .get(t)
            .copied()
            .ok_or(Error::TimestepOutOfRange { t, max: self.num_train_steps() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_halving() {
        let s = NoiseSchedule::from_betas(alloc::vec![0.5, 0.5, 0.5]).unwrap();
        assert_eq!(s.alphas_cumprod(), &[1.0, 0.5, 0.25, 0.125]);
        let one = NoiseSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(one.alphas_cumprod(), &[1.0, 0.5]);
    }

    #[test]
    fn thousand_step_terminal_value() {
        // Frozen from a 50-digit mpmath product over
        // beta_i = 1e-4 + (0.02 - 1e-4) * (i - 1) / 999.
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let last = s.alpha_bar(1000).unwrap();
        assert!((last - 4.035_829_765_375_683_3e-5).abs() <= 1e-12 * last, "{last:e}");
        assert!(s.alphas_cumprod().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn rejects_invalid() {
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.03, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
        assert!(NoiseSchedule::from_betas(alloc::vec![0.1, 1.2]).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, 0.02).unwrap().alpha_bar(11).is_err());
    }
}
