//! Deterministic DDIM machinery: schedules, forward diffusion, x0
//! prediction, classifier-free guidance and the sampling loop.

mod guidance;
mod ops;
mod plan;
mod sampler;
mod schedule;

pub use guidance::{guided_eps, Conditioning, NoiseModel};
pub use ops::{
    ddim_coefficients, ddim_coefficients_from, ddim_step, forward_diffuse, predict_x0, x0_coefficients,
    AffineStep,
};
pub use plan::InferencePlan;
pub use sampler::{image_to_latent, initial_latent, latent_to_image, sample, sample_latent};
pub use schedule::{NoiseSchedule, ScheduleKind};
