use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::{
    adamw_update, clip_gradient, l2_norm, project_gradient, project_parameters, two_phase_rollout, AdamW, AdamWState,
    AdversarialObjective, DeltaTracker, Rollout,
};
use crate::diffusion::{guided_eps, latent_to_image, predict_x0, sample, Conditioning, InferencePlan, NoiseSchedule};
use crate::error::{Error, Result};
use crate::model::{Classifier, ImageClassifier, NoisePredictor};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, SeedRole, ROLE_STRIDE};

/// Stop once a held-out probe shows target-class accuracy at or below
/// `threshold` for `patience` consecutive checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    pub threshold: f64,
    pub check_every: usize,
    pub patience: usize,
    pub probe_samples: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self { threshold: 0.1, check_every: 10, patience: 3, probe_samples: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub inference_steps: usize,
    pub grad_split_k: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch_noises: usize,
    pub eta: f64,
    pub boundary_fraction: f64,
    pub max_epochs: usize,
    pub target_class: usize,
    pub guidance_scale: f64,
    pub objective: AdversarialObjective,
    pub early_stop: Option<EarlyStop>,
    pub seed_base: u64,
    /// Whether the class-embedding table is fine-tuned along with the
    /// denoiser. It plays the role of the frozen prompt encoder, so by
    /// default it is left untouched and excluded from `theta`.
    pub tune_class_embedding: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            inference_steps: 20,
            grad_split_k: 10,
            learning_rate: 1e-4,
            weight_decay: 1e-2,
            clip_norm: 1.0,
            batch_noises: 8,
            eta: 0.05,
            boundary_fraction: 0.98,
            max_epochs: 200,
            target_class: 0,
            guidance_scale: Conditioning::DEFAULT_GUIDANCE,
            objective: AdversarialObjective::Untargeted,
            early_stop: None,
            seed_base: 0,
            tune_class_embedding: false,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidArgument(m));
        if self.grad_split_k == 0 || self.grad_split_k > self.inference_steps {
            return bad(format!(
                "grad_split_k must satisfy 0 < k <= inference_steps ({}), got {}",
                self.inference_steps, self.grad_split_k
            ));
        }
        if !(self.boundary_fraction > 0.0 && self.boundary_fraction < 1.0) {
            return bad(format!("boundary_fraction must lie in (0, 1), got {}", self.boundary_fraction));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning_rate must be positive and weight_decay nonnegative".into());
        }
        if self.batch_noises == 0 {
            return bad("batch_noises must be positive".into());
        }
        if (self.max_epochs * self.batch_noises) as u64 > ROLE_STRIDE {
            return bad(format!("max_epochs * batch_noises must not exceed {ROLE_STRIDE}"));
        }
        if self.target_class >= num_classes {
            return Err(Error::ClassOutOfRange { class: self.target_class, num_classes });
        }
        if let AdversarialObjective::Targeted { label } = self.objective {
            if label >= num_classes {
                return Err(Error::ClassOutOfRange { class: label, num_classes });
            }
        }
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return bad(format!("guidance_scale must be finite and nonnegative, got {}", self.guidance_scale));
        }
        if let Some(es) = self.early_stop {
            if es.check_every == 0 || es.patience == 0 || es.probe_samples == 0 {
                return bad("early_stop check_every, patience and probe_samples must be positive".into());
            }
        }
        Ok(())
    }

    pub fn conditioning(&self) -> Conditioning {
        Conditioning::class(self.target_class, self.guidance_scale)
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW::new(self.learning_rate, self.weight_decay)
    }
}

/// One epoch of the fine-tuning loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackRecord {
    pub epoch: usize,
    /// Mean adversarial loss over every scored x0 prediction.
    pub loss: f64,
    /// `||theta - theta_0||` after the parameter projection.
    pub delta_norm: f64,
    pub grad_norm_pre: f64,
    pub grad_norm_post: f64,
    pub grad_proj_fired: bool,
    pub param_proj_fired: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStop { epoch: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackLog {
    pub records: Vec<AttackRecord>,
    pub probe_accuracy: Vec<(usize, f64)>,
    pub stop: StopReason,
}

/// Loss statistics and summed parameter gradient of one batch of latents.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackGradient<S> {
    pub mean_loss: f64,
    /// `sum_t mean_b L(b, t)`: the objective whose gradient is `grad`.
    pub summed_loss: f64,
    pub grad: Vec<S>,
}

/// Runs one two-phase rollout per seed, scores every gradient-phase x0
/// prediction with the frozen classifier and sums the per-step gradients.
///
/// Each step's loss is averaged over the batch; the per-step gradients are
/// summed over the gradient phase. Accumulation order is fixed (seed-major,
/// then step), so the result is reproducible.
#[allow(clippy::too_many_arguments)]
pub fn attack_gradient<S: Scalar>(
    model: &NoisePredictor<S>,
    classifier: &Classifier<S>,
    schedule: &NoiseSchedule,
    plan: &InferencePlan,
    cond: &Conditioning,
    objective: &AdversarialObjective,
    seeds: &[u64],
) -> Result<AttackGradient<S>> {
    let y = cond.class.ok_or_else(|| Error::InvalidArgument("the attack needs a class condition".into()))?;
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one latent per batch is required".into()));
    }
    let inv_batch = S::lit(1.0 / seeds.len() as f64);
    let mut grad = vec![S::zero(); model.num_params()];
    let mut total = 0.0;
    let mut count = 0usize;
    for &seed in seeds {
        let rollout = two_phase_rollout(model, schedule, plan, cond, seed)?;
        for step in &rollout.steps {
            let (out, tape) = classifier.forward(&step.image())?;
            let (loss, g_logits) = objective.loss_and_grad(&out.logits, y)?;
            total += loss.as_f64();
            count += 1;
            let g_logits: Vec<S> = g_logits.into_iter().map(|v| v * inv_batch).collect();
            let g_image = classifier.backward(&tape, &g_logits, None, true)?.unwrap_or_default();
            step.backward(model, &g_image, &mut grad)?;
        }
    }
    let mean_loss = total / count as f64;
    Ok(AttackGradient { mean_loss, summed_loss: total / seeds.len() as f64, grad })
}

/// The loss differentiated by [`attack_gradient`], evaluated for `model`
/// with every gradient-phase latent held at the value recorded in
/// `rollouts`: the sum over steps of the batch-mean adversarial loss.
///
/// Perturbing `model` while keeping `rollouts` fixed gives a
/// finite-difference reference for the detached per-step gradient.
pub fn detached_loss<S: Scalar>(
    model: &NoisePredictor<S>,
    classifier: &Classifier<S>,
    schedule: &NoiseSchedule,
    cond: &Conditioning,
    objective: &AdversarialObjective,
    rollouts: &[Rollout<S>],
) -> Result<f64> {
    let y = cond.class.ok_or_else(|| Error::InvalidArgument("the attack needs a class condition".into()))?;
    if rollouts.is_empty() {
        return Err(Error::InvalidArgument("no rollouts given".into()));
    }
    let mut total = 0.0;
    for rollout in rollouts {
        for step in &rollout.steps {
            let eps = guided_eps(model, &step.latent, step.timestep, cond)?;
            let x0 = predict_x0(&step.latent, &eps, step.timestep, schedule)?;
            let logits = classifier.classify(&latent_to_image(&x0))?.logits;
            total += objective.loss_and_grad(&logits, y)?.0.as_f64();
        }
    }
    Ok(total / rollouts.len() as f64)
}

/// Fraction of `n` freshly sampled images of `class` that the classifier
/// assigns to `class`.
pub fn generated_accuracy<S: Scalar, C: ImageClassifier<S> + ?Sized>(
    model: &NoisePredictor<S>,
    classifier: &C,
    schedule: &NoiseSchedule,
    plan: &InferencePlan,
    cond: &Conditioning,
    seeds: impl IntoIterator<Item = u64>,
) -> Result<f64> {
    let class = cond.class.ok_or_else(|| Error::InvalidArgument("accuracy needs a class condition".into()))?;
    let (mut hits, mut n) = (0usize, 0usize);
    for seed in seeds {
        let img = sample(model, schedule, plan, cond, seed)?;
        if classifier.classify(&img)?.predicted() == class {
            hits += 1;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no probe samples".into()));
    }
    Ok(hits as f64 / n as f64)
}

/// Fine-tunes a copy of `model0` inside the L2 ball of radius `eta` so that
/// images generated for `target_class` are misclassified.
///
/// Per epoch: sample `batch_noises` latents, sum the gradient-phase
/// gradients, project out the radial component near the boundary, clip,
/// take an AdamW step, and retract onto the ball. `model0` and the
/// classifier are never modified.
pub fn crafted_finetune<S: Scalar>(
    model0: &NoisePredictor<S>,
    classifier: &Classifier<S>,
    schedule: &NoiseSchedule,
    plan: &InferencePlan,
    config: &AttackConfig,
) -> Result<(NoisePredictor<S>, AttackLog)> {
    config.validate(model0.arch().num_classes)?;
    plan.validate_against(schedule)?;
    if plan.len() != config.inference_steps || plan.grad_split_k() != config.grad_split_k {
        return Err(Error::InvalidPlan(format!(
            "plan has {} steps with k={}, config asks for {} with k={}",
            plan.len(),
            plan.grad_split_k(),
            config.inference_steps,
            config.grad_split_k
        )));
    }
    let cond = config.conditioning();
    let opt = config.optimizer();
    let mut model = model0.clone();
    let trainable = trainable_ranges(model0, config);
    let mut theta = gather(model0.params(), &trainable);
    let mut tracker = DeltaTracker::new(&theta);
    let mut state = AdamWState::zeros(theta.len());
    let mut records = Vec::with_capacity(config.max_epochs);
    let mut probe_accuracy = Vec::new();
    let mut below = 0usize;
    let mut stop = StopReason::MaxEpochs;
    let probe_plan = plan.with_grad_split(0)?;

    for epoch in 0..config.max_epochs {
        let seeds = (0..config.batch_noises)
            .map(|b| derive_seed(config.seed_base, SeedRole::AttackNoise, (epoch * config.batch_noises + b) as u64))
            .collect::<Result<Vec<_>>>()?;
        let batch = attack_gradient(&model, classifier, schedule, plan, &cond, &config.objective, &seeds)?;
        if !batch.mean_loss.is_finite() || batch.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { epoch, loss: batch.mean_loss });
        }

        let grad = gather(&batch.grad, &trainable);
        let d = tracker.delta(&theta)?;
        let (projected, grad_proj_fired) = project_gradient(&grad, &d, config.eta, config.boundary_fraction)?;
        let grad_norm_pre = l2_norm(&projected);
        let clipped = clip_gradient(&projected, config.clip_norm);
        let grad_norm_post = l2_norm(&clipped);
        adamw_update(&mut theta, &clipped, &mut state, &opt)?;
        let param_proj_fired = project_parameters(&mut theta, &mut tracker, config.eta)?;
        scatter(&theta, &trainable, model.params_mut());

        records.push(AttackRecord {
            epoch,
            loss: batch.mean_loss,
            delta_norm: tracker.current_delta_norm(),
            grad_norm_pre,
            grad_norm_post,
            grad_proj_fired,
            param_proj_fired,
        });

        if let Some(es) = config.early_stop {
            if (epoch + 1) % es.check_every == 0 {
                let seeds = (0..es.probe_samples as u64)
                    .map(|i| derive_seed(config.seed_base, SeedRole::AttackProbe, i))
                    .collect::<Result<Vec<_>>>()?;
                let acc = generated_accuracy(&model, classifier, schedule, &probe_plan, &cond, seeds)?;
                probe_accuracy.push((epoch, acc));
                below = if acc <= es.threshold { below + 1 } else { 0 };
                if below >= es.patience {
                    stop = StopReason::EarlyStop { epoch };
                    break;
                }
            }
        }
    }
    Ok((model, AttackLog { records, probe_accuracy, stop }))
}

/// Flat index ranges of the parameters the attack updates.
fn trainable_ranges<S: Scalar>(model: &NoisePredictor<S>, config: &AttackConfig) -> Vec<Range<usize>> {
    let n = model.num_params();
    if config.tune_class_embedding {
        return vec![0..n];
    }
    let frozen = model.class_embedding_range();
    [0..frozen.start, frozen.end..n].into_iter().filter(|r| !r.is_empty()).collect()
}

fn gather<S: Copy>(all: &[S], ranges: &[Range<usize>]) -> Vec<S> {
    ranges.iter().flat_map(|r| all[r.clone()].iter().copied()).collect()
}

fn scatter<S: Copy>(sub: &[S], ranges: &[Range<usize>], all: &mut [S]) {
    let mut offset = 0;
    for r in ranges {
        all[r.clone()].copy_from_slice(&sub[offset..offset + r.len()]);
        offset += r.len();
    }
}
