use alloc::vec::Vec;

use crate::diffusion::{
    ddim_step, guided_eps, initial_latent, latent_to_image, x0_coefficients, AffineStep, Conditioning, InferencePlan,
    NoiseModel, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::model::{NoisePredictor, PredictorTape};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One gradient-phase step: the detached incoming latent, its x0
/// prediction, and the tapes of the predictor evaluations that produced it.
#[derive(Debug, Clone)]
pub struct GradientStep<S> {
    pub timestep: usize,
    pub latent: Tensor<S>,
    pub x0: Tensor<S>,
    x0_step: AffineStep,
    cond_tape: Option<(f64, PredictorTape<S>)>,
    uncond_tape: Option<(f64, PredictorTape<S>)>,
}

impl<S: Scalar> GradientStep<S> {
    /// Image handed to the classifier: x0 remapped from `[-1, 1]` to `[0, 1]`
    /// and clamped.
    pub fn image(&self) -> Tensor<S> {
        latent_to_image(&self.x0)
    }

    /// Accumulates `d loss / d theta` into `grad` from `d loss / d image`.
    ///
    /// Gradient flows through the remap (zero where clamped), the x0
    /// prediction and each guidance branch; the incoming latent is treated
    /// as a constant.
    pub fn backward(&self, model: &NoisePredictor<S>, grad_image: &[S], grad: &mut [S]) -> Result<()> {
        let half = S::lit(0.5);
        let coeff = S::lit(self.x0_step.eps_coeff);
        let g_eps: Vec<S> = grad_image
            .iter()
            .zip(self.x0.data())
            .map(|(&g, &x)| {
                let pix = (x + S::one()) * half;
                if pix > S::zero() && pix < S::one() {
                    g * half * coeff
                } else {
                    S::zero()
                }
            })
            .collect();
        for (w, tape) in self.cond_tape.iter().chain(self.uncond_tape.iter()) {
            let w = S::lit(*w);
            let g: Vec<S> = g_eps.iter().map(|&v| v * w).collect();
            model.backward(tape, &g, grad)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Rollout<S> {
    pub final_image: Tensor<S>,
    pub steps: Vec<GradientStep<S>>,
}

/// DDIM sampling split in two phases. The first `len - k` steps only update
/// the latent; each of the final `k` steps also records its x0 prediction and
/// the predictor tapes needed to backpropagate into the parameters.
///
/// Values are identical to [`crate::diffusion::sample`] for the same seed.
pub fn two_phase_rollout<S: Scalar>(
    model: &NoisePredictor<S>,
    schedule: &NoiseSchedule,
    plan: &InferencePlan,
    cond: &Conditioning,
    seed: u64,
) -> Result<Rollout<S>> {
    if plan.grad_split_k() == 0 {
        return Err(Error::InvalidPlan("the gradient phase needs grad_split_k >= 1".into()));
    }
    plan.validate_against(schedule)?;
    cond.validate(model.num_classes())?;
    let start = plan.gradient_phase_start();
    let mut z = initial_latent::<S>(model.image_shape(), seed);
    let mut steps = Vec::with_capacity(plan.grad_split_k());
    for (i, (t, t_prev)) in plan.transitions().enumerate() {
        if i < start {
            let eps = guided_eps(model, &z, t, cond)?;
            z = ddim_step(&z, &eps, t, t_prev, schedule)?;
            continue;
        }
        let (eps, cond_tape, uncond_tape) = taped_guided_eps(model, &z, t, cond)?;
        let x0_step = x0_coefficients(schedule, t)?;
        let x0 = x0_step.apply(&z, &eps)?;
        let next = ddim_step(&z, &eps, t, t_prev, schedule)?;
        steps.push(GradientStep { timestep: t, latent: z, x0, x0_step, cond_tape, uncond_tape });
        z = next;
    }
    Ok(Rollout { final_image: latent_to_image(&z), steps })
}

type Taped<S> = Option<(f64, PredictorTape<S>)>;

// Mirrors `guided_eps` operation for operation so values match bit for bit.
fn taped_guided_eps<S: Scalar>(
    model: &NoisePredictor<S>,
    z: &Tensor<S>,
    t: usize,
    cond: &Conditioning,
) -> Result<(Tensor<S>, Taped<S>, Taped<S>)> {
    let Some(class) = cond.class else {
        let (u, tape) = model.forward(z, t, None)?;
        return Ok((u, None, Some((1.0, tape))));
    };
    if cond.guidance_scale == 1.0 {
        let (c, tape) = model.forward(z, t, Some(class))?;
        return Ok((c, Some((1.0, tape)), None));
    }
    let (u, u_tape) = model.forward(z, t, None)?;
    if cond.guidance_scale == 0.0 {
        return Ok((u, None, Some((1.0, u_tape))));
    }
    let (c, c_tape) = model.forward(z, t, Some(class))?;
    let w = S::lit(cond.guidance_scale);
    let eps = u.zip_map(&c, |u, c| u + w * (c - u))?;
    let (wc, wu) = cond.mixing_weights();
    Ok((eps, Some((wc, c_tape)), Some((wu, u_tape))))
}
