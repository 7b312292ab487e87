use alloc::format;
use alloc::vec::Vec;

use super::NoiseSchedule;
use crate::error::{Error, Result};

/// Decreasing DDIM timestep subsequence plus the split between the
/// gradient-free phase and the final `grad_split_k` gradient-enabled steps.
///
/// The last listed timestep transitions to timestep 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferencePlan {
    timesteps: Vec<usize>,
    grad_split_k: usize,
}

impl InferencePlan {
    pub fn new(timesteps: Vec<usize>, grad_split_k: usize, schedule: &NoiseSchedule) -> Result<Self> {
        if timesteps.is_empty() {
            return Err(Error::EmptyPlan);
        }
        let max = schedule.num_train_steps();
        if let Some(&t) = timesteps.iter().find(|&&t| t == 0 || t > max) {
            return Err(Error::InvalidPlan(format!("timestep {t} outside 1..={max}")));
        }
        if timesteps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidPlan("timesteps must be strictly decreasing".into()));
        }
        if grad_split_k > timesteps.len() {
            return Err(Error::InvalidPlan(format!(
                "grad_split_k {grad_split_k} exceeds {} inference steps",
                timesteps.len()
            )));
        }
        Ok(Self { timesteps, grad_split_k })
    }

    /// Evenly strided plan `[N, N - N/T, ..., N/T]` for `steps` inference steps.
    pub fn uniform(schedule: &NoiseSchedule, steps: usize, grad_split_k: usize) -> Result<Self> {
        let n = schedule.num_train_steps();
        if steps == 0 {
            return Err(Error::EmptyPlan);
        }
        if steps > n {
            return Err(Error::InvalidPlan(format!("{steps} inference steps exceed {n} training steps")));
        }
        let timesteps = (0..steps).map(|i| (steps - i) * n / steps).collect();
        Self::new(timesteps, grad_split_k, schedule)
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }

    pub fn grad_split_k(&self) -> usize {
        self.grad_split_k
    }

    pub fn with_grad_split(&self, grad_split_k: usize) -> Result<Self> {
        if grad_split_k > self.len() {
            return Err(Error::InvalidPlan(format!(
                "grad_split_k {grad_split_k} exceeds {} inference steps",
                self.len()
            )));
        }
        Ok(Self { timesteps: self.timesteps.clone(), grad_split_k })
    }

    /// Index of the first gradient-enabled step.
    pub fn gradient_phase_start(&self) -> usize {
        self.len() - self.grad_split_k
    }

    /// `(t, t_prev)` pairs in execution order.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.timesteps
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, self.timesteps.get(i + 1).copied().unwrap_or(0)))
    }

    pub fn validate_against(&self, schedule: &NoiseSchedule) -> Result<()> {
        Self::new(self.timesteps.clone(), self.grad_split_k, schedule).map(|_| ())
    }
}
