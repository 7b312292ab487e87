use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{cross_entropy, Classifier, Dataset, ImageClassifier, NoisePredictor, Split};
use crate::attack::{adamw_update, AdamW, AdamWState};
use crate::diffusion::{forward_diffuse, image_to_latent, NoiseSchedule};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorTrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Probability of replacing the class with the NULL embedding.
    pub cond_dropout: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierTrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierReport {
    pub loss_curve: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

fn check_batch(batch_size: usize) -> Result<()> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    Ok(())
}

/// Noise-prediction training: minimises the mean squared error between the
/// predicted and true noise at uniformly drawn timesteps in `1..=N`.
///
/// Returns the per-epoch mean loss.
pub fn train_noise_predictor<S: Scalar>(
    model: &mut NoisePredictor<S>,
    data: &Dataset<S>,
    schedule: &NoiseSchedule,
    cfg: &PredictorTrainingConfig,
) -> Result<Vec<f64>> {
    check_batch(cfg.batch_size)?;
    if !(0.0..1.0).contains(&cfg.cond_dropout) {
        return Err(Error::InvalidArgument("cond_dropout must lie in [0, 1)".into()));
    }
    let train = data.split(Split::Train);
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.num_classes() != model.arch().num_classes {
        return Err(Error::InvalidArgument("dataset and model disagree on num_classes".into()));
    }
    let latents: Vec<Tensor<S>> = train.iter().map(|s| image_to_latent(&s.image)).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let opt = AdamW::new(cfg.learning_rate, 0.0);
    let mut state = AdamWState::zeros(model.num_params());
    let mut grad = vec![S::zero(); model.num_params()];
    let n_steps = schedule.num_train_steps();
    let numel = model.arch().image_shape().iter().product::<usize>();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = S::zero());
            let scale = S::lit(2.0 / (numel * batch.len()) as f64);
            for &i in batch {
                let t = rng.random_range(1..=n_steps);
                let noise = Tensor::standard_normal_from(latents[i].shape(), &mut rng);
                let class = if rng.random::<f64>() < cfg.cond_dropout { None } else { Some(train[i].label) };
                let x_t = forward_diffuse(&latents[i], t, &noise, schedule)?;
                let (pred, tape) = model.forward(&x_t, t, class)?;
                let diff: Vec<S> = pred.data().iter().zip(noise.data()).map(|(&p, &n)| p - n).collect();
                epoch_loss += diff.iter().map(|d| d.as_f64() * d.as_f64()).sum::<f64>() / numel as f64;
                let g_out: Vec<S> = diff.iter().map(|&d| d * scale).collect();
                model.backward(&tape, &g_out, &mut grad)?;
            }
            adamw_update(model.params_mut(), &grad, &mut state, &opt)?;
        }
        let mean = epoch_loss / train.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("noise predictor training loss".into()));
        }
        curve.push(mean);
    }
    Ok(curve)
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn accuracy<S: Scalar, C: ImageClassifier<S> + ?Sized>(classifier: &C, samples: &[&super::Sample<S>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hits = 0usize;
    for s in samples {
        if classifier.classify(&s.image)?.predicted() == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Cross-entropy training with AdamW; reports train and held-out accuracy.
pub fn train_classifier<S: Scalar>(
    classifier: &mut Classifier<S>,
    data: &Dataset<S>,
    cfg: &ClassifierTrainingConfig,
) -> Result<ClassifierReport> {
    check_batch(cfg.batch_size)?;
    let train = data.split(Split::Train);
    let test = data.split(Split::Test);
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.num_classes() != classifier.arch().num_classes {
        return Err(Error::InvalidArgument("dataset and classifier disagree on num_classes".into()));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let opt = AdamW::new(cfg.learning_rate, 0.0);
    let total = classifier.params().len();
    let mut state = AdamWState::zeros(total);
    let mut grad = vec![S::zero(); total];
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = S::zero());
            let scale = S::lit(1.0 / batch.len() as f64);
            for &i in batch {
                let (out, tape) = classifier.forward(&train[i].image)?;
                let (loss, g) = cross_entropy(&out.logits, train[i].label)?;
                epoch_loss += loss.as_f64();
                let g: Vec<S> = g.into_iter().map(|v| v * scale).collect();
                classifier.backward(&tape, &g, Some(&mut grad), false)?;
            }
            adamw_update(classifier.params_mut(), &grad, &mut state, &opt)?;
        }
        curve.push(epoch_loss / train.len() as f64);
    }
    Ok(ClassifierReport {
        loss_curve: curve,
        train_accuracy: accuracy(classifier, &train)?,
        test_accuracy: accuracy(classifier, &test)?,
    })
}
