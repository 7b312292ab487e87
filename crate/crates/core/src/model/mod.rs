//! The trainable stand-ins: a conditional noise predictor, a small image
//! classifier, the procedural dataset they are trained on, and their base
//! training loops.

mod classifier;
mod dataset;
mod noise_predictor;
mod training;

pub use classifier::{
    argmax, cross_entropy, BatchClassification, Classification, Classifier, ClassifierArch, ClassifierTape,
    ImageClassifier,
};
pub use dataset::{render_shape, Dataset, Sample, ShapeKind, ShapesConfig, Split};
pub use noise_predictor::{NoisePredictor, PredictorArch, PredictorTape};
pub use training::{
    accuracy, train_classifier, train_noise_predictor, ClassifierReport, ClassifierTrainingConfig,
    PredictorTrainingConfig,
};

use core::ops::Range;

// Disjoint mutable views of a weight range and the bias range right after it.
pub(crate) fn split_pair_mut<S>(buf: &mut [S], first: Range<usize>, second: Range<usize>) -> (&mut [S], &mut [S]) {
    debug_assert_eq!(first.end, second.start);
    let (a, b) = buf[first.start..second.end].split_at_mut(first.len());
    (a, b)
}
