//! Evaluation metrics comparing a baseline model against attacked copies:
//! per-class classifier accuracy, paired-seed image distance and a Fréchet
//! distance over classifier features.
//!
//! Image generation is separated from metric computation so a caller can
//! generate cells in parallel and then assemble every matrix from the same
//! images.

mod frechet;
mod report;

pub use frechet::{frechet_distance, sqrtm_psd, DEFAULT_REGULARIZATION};
pub use report::{build_report, EvaluationReport, MetricMatrix, BASELINE_LABEL};

// Float math for `no_std` builds; std's inherent methods shadow it when std is linked.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::string::String;
use alloc::vec::Vec;

use crate::diffusion::{sample, Conditioning, InferencePlan, NoiseModel, NoiseSchedule};
use crate::error::{Error, Result};
use crate::model::{argmax, ImageClassifier};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, SeedRole};
use crate::tensor::Tensor;

/// Shared sampling settings for every cell of an evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub images_per_cell: usize,
    pub guidance_scale: f64,
    pub seed_base: u64,
    pub regularization: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { images_per_cell: 64, guidance_scale: 3.0, seed_base: 0, regularization: DEFAULT_REGULARIZATION }
    }
}

impl EvalSettings {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.images_per_cell == 0 {
            return Err(Error::InvalidArgument("images_per_cell must be positive".into()));
        }
        // every (class, image) pair needs a distinct seed index
        if num_classes * self.images_per_cell > crate::seed::ROLE_STRIDE as usize {
            return Err(Error::InvalidArgument("too many evaluation images for the seed scheme".into()));
        }
        if !(self.regularization >= 0.0) || !self.guidance_scale.is_finite() {
            return Err(Error::InvalidArgument("invalid regularization or guidance scale".into()));
        }
        Ok(())
    }

    /// Seed of image `index` in the cell for `class`; identical across models
    /// so cells can be compared pairwise.
    pub fn seed(&self, class: usize, index: usize) -> Result<u64> {
        derive_seed(self.seed_base, SeedRole::Evaluation, (class * self.images_per_cell + index) as u64)
    }
}

/// Generates the images of one `(model, class)` cell.
pub fn generate_cell<S: Scalar, M: NoiseModel<S> + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    plan: &InferencePlan,
    class: usize,
    settings: &EvalSettings,
) -> Result<Vec<Tensor<S>>> {
    settings.validate(model.num_classes())?;
    let cond = Conditioning { class: Some(class), guidance_scale: settings.guidance_scale };
    cond.validate(model.num_classes())?;
    (0..settings.images_per_cell).map(|i| sample(model, schedule, plan, &cond, settings.seed(class, i)?)).collect()
}

/// Images of every class for one model, indexed by class.
pub fn generate_all<S: Scalar, M: NoiseModel<S> + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    plan: &InferencePlan,
    settings: &EvalSettings,
) -> Result<Vec<Vec<Tensor<S>>>> {
    (0..model.num_classes()).map(|c| generate_cell(model, schedule, plan, c, settings)).collect()
}

/// Fraction of `images` the classifier assigns to `class`.
pub fn cell_accuracy<S: Scalar, C: ImageClassifier<S> + ?Sized>(
    classifier: &C,
    images: &[Tensor<S>],
    class: usize,
) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hits = 0usize;
    for img in images {
        if argmax(&classifier.classify(img)?.logits) == class {
            hits += 1;
        }
    }
    Ok(hits as f64 / images.len() as f64)
}

/// Root-mean-square per-element difference `||a - b||_2 / sqrt(len)`.
pub fn rms_distance<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    a.same_shape(b)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let sq: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum();
    Ok((sq / a.len() as f64).sqrt())
}

/// Mean RMS distance between images generated from identical seeds.
pub fn paired_rms<S: Scalar>(a: &[Tensor<S>], b: &[Tensor<S>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch { expected: a.len(), found: b.len() });
    }
    if a.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        total += rms_distance(x, y)?;
    }
    Ok(total / a.len() as f64)
}

/// Classifier penultimate features of `images` as an `[n, feature_dim]` tensor.
pub fn cell_features<S: Scalar, C: ImageClassifier<S> + ?Sized>(classifier: &C, images: &[Tensor<S>]) -> Result<Tensor<S>> {
    Ok(classifier.classify_batch(images)?.features)
}

/// Fréchet distance between classifier features of two image cells.
pub fn cell_fid<S: Scalar, C: ImageClassifier<S> + ?Sized>(
    classifier: &C,
    a: &[Tensor<S>],
    b: &[Tensor<S>],
    regularization: f64,
) -> Result<f64> {
    frechet_distance(&cell_features(classifier, a)?, &cell_features(classifier, b)?, regularization)
}

/// Accuracy row of one model over all classes.
pub fn accuracy_row<S: Scalar, C: ImageClassifier<S> + ?Sized>(classifier: &C, cells: &[Vec<Tensor<S>>]) -> Result<Vec<f64>> {
    cells.iter().enumerate().map(|(c, imgs)| cell_accuracy(classifier, imgs, c)).collect()
}

/// Per-class paired RMS distance between two models' cells.
pub fn paired_l2_row<S: Scalar>(a: &[Vec<Tensor<S>>], b: &[Vec<Tensor<S>>]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch { expected: a.len(), found: b.len() });
    }
    a.iter().zip(b).map(|(x, y)| paired_rms(x, y)).collect()
}

/// Per-class Fréchet distance between an attacked model's cells and the
/// baseline cells.
pub fn fid_row<S: Scalar, C: ImageClassifier<S> + ?Sized>(
    classifier: &C,
    attacked: &[Vec<Tensor<S>>],
    baseline: &[Vec<Tensor<S>>],
    regularization: f64,
) -> Result<Vec<f64>> {
    if attacked.len() != baseline.len() {
        return Err(Error::ShapeMismatch { expected: baseline.len(), found: attacked.len() });
    }
    attacked.iter().zip(baseline).map(|(a, b)| cell_fid(classifier, a, b, regularization)).collect()
}

/// Computes all three matrices from pre-generated images. `attacked` pairs a
/// row label (the attack target) with that model's per-class cells.
pub fn evaluate_cells<S: Scalar, C: ImageClassifier<S> + ?Sized>(
    classifier: &C,
    class_names: &[String],
    baseline: &[Vec<Tensor<S>>],
    attacked: &[(String, Vec<Vec<Tensor<S>>>)],
    settings: &EvalSettings,
) -> Result<EvaluationReport> {
    if baseline.len() != class_names.len() {
        return Err(Error::InvalidArgument("baseline cells do not match the class list".into()));
    }
    let labels: Vec<String> = attacked.iter().map(|(l, _)| l.clone()).collect();
    let mut acc_rows = alloc::vec![accuracy_row(classifier, baseline)?];
    let (mut l2_rows, mut fid_rows) = (Vec::new(), Vec::new());
    for (_, cells) in attacked {
        acc_rows.push(accuracy_row(classifier, cells)?);
        l2_rows.push(paired_l2_row(cells, baseline)?);
        fid_rows.push(fid_row(classifier, cells, baseline, settings.regularization)?);
    }
    let mut acc_labels = alloc::vec![String::from(BASELINE_LABEL)];
    acc_labels.extend(labels.iter().cloned());
    build_report(
        MetricMatrix::new(acc_labels, class_names.to_vec(), acc_rows)?,
        MetricMatrix::new(labels.clone(), class_names.to_vec(), l2_rows)?,
        MetricMatrix::new(labels, class_names.to_vec(), fid_rows)?,
        settings.images_per_cell,
        settings.seed_base,
    )
}

/// Generates every cell sequentially and evaluates it.
pub fn evaluate_models<S: Scalar, M: NoiseModel<S>, C: ImageClassifier<S> + ?Sized>(
    baseline: &M,
    attacked: &[(String, &M)],
    classifier: &C,
    class_names: &[String],
    schedule: &NoiseSchedule,
    plan: &InferencePlan,
    settings: &EvalSettings,
) -> Result<EvaluationReport> {
    let base_cells = generate_all(baseline, schedule, plan, settings)?;
    let mut rows = Vec::with_capacity(attacked.len());
    for (label, model) in attacked {
        rows.push((label.clone(), generate_all(*model, schedule, plan, settings)?));
    }
    evaluate_cells(classifier, class_names, &base_cells, &rows, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Classification;
    use alloc::vec;

    struct Constant {
        class: usize,
        classes: usize,
    }

    impl ImageClassifier<f64> for Constant {
        fn num_classes(&self) -> usize {
            self.classes
        }
        fn feature_dim(&self) -> usize {
            2
        }
        fn classify(&self, image: &Tensor<f64>) -> Result<Classification<f64>> {
            let mut logits = vec![0.0; self.classes];
            logits[self.class] = 1.0;
            let m = image.data().iter().sum::<f64>() / image.len() as f64;
            Ok(Classification { logits, features: vec![m, image.data()[0]] })
        }
    }

    fn imgs(vals: &[f64]) -> Vec<Tensor<f64>> {
        vals.iter().map(|&v| Tensor::full(&[1, 2, 2], v)).collect()
    }

    #[test]
    fn constant_classifier_accuracy_pattern() {
        let clf = Constant { class: 0, classes: 3 };
        let cells = vec![imgs(&[0.1, 0.2]), imgs(&[0.3, 0.4]), imgs(&[0.5, 0.6])];
        assert_eq!(accuracy_row(&clf, &cells).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn rms_of_constant_offset() {
        let a = Tensor::<f64>::full(&[1, 4, 4], 0.3);
        let b = Tensor::<f64>::full(&[1, 4, 4], 0.4);
        assert!((rms_distance(&a, &b).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(rms_distance(&a, &a).unwrap(), 0.0);
        assert!(rms_distance(&a, &Tensor::zeros(&[1, 2, 2])).is_err());
    }

    #[test]
    fn seeds_are_distinct_per_cell_and_shared_across_models() {
        let s = EvalSettings { images_per_cell: 10, ..Default::default() };
        let mut all: Vec<u64> = (0..3).flat_map(|c| (0..10).map(move |i| (c, i))).map(|(c, i)| s.seed(c, i).unwrap()).collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 30);
        assert!(EvalSettings { images_per_cell: 5000, ..s }.validate(3).is_err());
        assert!(EvalSettings { images_per_cell: 0, ..s }.validate(3).is_err());
    }
}
