use super::{ddim_step, guided_eps, Conditioning, InferencePlan, NoiseModel, NoiseSchedule};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Maps a pixel-space latent in `[-1, 1]` to an image in `[0, 1]`.
pub fn latent_to_image<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let half = S::lit(0.5);
    x.map(|v| ((v + S::one()) * half).max(S::zero()).min(S::one()))
}

/// Maps an image in `[0, 1]` to pixel space `[-1, 1]`.
pub fn image_to_latent<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let two = S::lit(2.0);
    x.map(|v| v * two - S::one())
}

pub fn initial_latent<S: Scalar>(shape: [usize; 3], seed: u64) -> Tensor<S> {
    Tensor::standard_normal(&shape, seed)
}

/// Runs the full deterministic DDIM chain and returns the final latent
/// before remapping.
pub fn sample_latent<S: Scalar, M: NoiseModel<S> + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    plan: &InferencePlan,
    cond: &Conditioning,
    seed: u64,
) -> Result<Tensor<S>> {
    if plan.is_empty() {
        return Err(Error::EmptyPlan);
    }
    plan.validate_against(schedule)?;
    let mut z = initial_latent(model.image_shape(), seed);
    for (t, t_prev) in plan.transitions() {
        let eps = guided_eps(model, &z, t, cond)?;
        z = ddim_step(&z, &eps, t, t_prev, schedule)?;
    }
    if !z.is_finite() {
        return Err(Error::NonFinite("sampled latent".into()));
    }
    Ok(z)
}

/// Generates one image in `[0, 1]` from the standard-normal latent drawn
/// with `seed`.
pub fn sample<S: Scalar, M: NoiseModel<S> + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    plan: &InferencePlan,
    cond: &Conditioning,
    seed: u64,
) -> Result<Tensor<S>> {
    sample_latent(model, schedule, plan, cond, seed).map(|z| latent_to_image(&z))
}
