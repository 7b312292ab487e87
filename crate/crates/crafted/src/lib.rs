//! File formats, experiment configuration and the command pipeline for the
//! constrained diffusion fine-tuning attack implemented in `crafted-core`.

pub mod artifacts;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod pipeline;
pub mod selfcheck;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use commands::{CommandOutcome, GlobalOptions};
pub use config::{ConfigError, ExperimentConfig};
