//! Constrained adversarial fine-tuning of the noise predictor.
//!
//! The loop samples latents, runs DDIM without gradients until the final
//! `k` steps, scores each x0 prediction of those steps with a frozen
//! classifier, sums the per-step gradients and takes an AdamW step whose
//! gradient has had its radial component removed near the boundary of the
//! L2 ball around the original parameters. Parameters are retracted onto the
//! ball after every step.

mod adamw;
mod finetune;
mod loss;
mod projection;
mod rollout;

pub use adamw::{adamw_update, AdamW, AdamWState};
pub use finetune::{
    attack_gradient, crafted_finetune, detached_loss, generated_accuracy, AttackConfig, AttackGradient, AttackLog, AttackRecord,
    EarlyStop, StopReason,
};
pub use loss::{adversarial_loss, adversarial_loss_and_grad, AdversarialObjective};
pub use projection::{clip_gradient, l2_norm, project_gradient, project_parameters, DeltaTracker};
pub use rollout::{two_phase_rollout, GradientStep, Rollout};
