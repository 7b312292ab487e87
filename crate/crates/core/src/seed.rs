//! Seed derivation shared by training, attack and evaluation.
//!
//! Every random draw in an experiment is keyed by `(seed_base, role, index)`
//! and mapped to `seed_base * 10^6 + role_offset * 10^4 + index`. Keeping the
//! arithmetic explicit lets two models be sampled from identical latents.

use crate::error::{Error, Result};

pub const ROLE_STRIDE: u64 = 10_000;
pub const BASE_STRIDE: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeedRole {
    DatasetTrain,
    DatasetTest,
    PredictorInit,
    PredictorTraining,
    ClassifierInit,
    ClassifierTraining,
    AttackNoise,
    AttackProbe,
    Evaluation,
}

impl SeedRole {
    pub const fn offset(self) -> u64 {
        match self {
            SeedRole::DatasetTrain => 1,
            SeedRole::DatasetTest => 2,
            SeedRole::PredictorInit => 3,
            SeedRole::PredictorTraining => 4,
            SeedRole::ClassifierInit => 5,
            SeedRole::ClassifierTraining => 6,
            SeedRole::AttackNoise => 7,
            SeedRole::AttackProbe => 8,
            SeedRole::Evaluation => 9,
        }
    }
}

/// Derives the seed for draw `index` of `role`. Indices must stay below
/// [`ROLE_STRIDE`] so distinct `(role, index)` pairs never collide.
pub fn derive_seed(seed_base: u64, role: SeedRole, index: u64) -> Result<u64> {
    if index >= ROLE_STRIDE {
        return Err(Error::InvalidArgument(alloc::format!(
            "seed index {index} exceeds per-role capacity {ROLE_STRIDE}"
        )));
    }
    Ok(seed_base
        .wrapping_mul(BASE_STRIDE)
        .wrapping_add(role.offset() * ROLE_STRIDE)
        .wrapping_add(index))
}
