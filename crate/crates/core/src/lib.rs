//! Numerical core for constrained adversarial fine-tuning of conditional
//! diffusion models.
//!
//! The crate is `no_std` (with `alloc`): DDIM sampling, the small trainable
//! noise predictor and classifier, the projected fine-tuning loop and the
//! evaluation metrics all run without IO. File formats and the command line
//! live in the companion `crafted` crate.
#![no_std]

extern crate alloc;

pub mod attack;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use seed::{derive_seed, SeedRole};
pub use tensor::Tensor;
