use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::split_pair_mut;
use crate::error::{check_len, Error, Result};
use crate::nn::*;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Two conv/pool stages, a dense feature layer and a linear head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassifierArch {
    pub image_channels: usize,
    pub image_size: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl ClassifierArch {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 4 || self.image_size % 4 != 0 {
            return Err(Error::InvalidArgument("classifier image_size must be a positive multiple of 4".into()));
        }
        if [self.image_channels, self.conv1_channels, self.conv2_channels, self.feature_dim].contains(&0) {
            return Err(Error::InvalidArgument("classifier widths must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("classifier needs at least 2 classes".into()));
        }
        Ok(())
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.image_channels, self.image_size, self.image_size]
    }

    fn flat_len(&self) -> usize {
        self.conv2_channels * (self.image_size / 4) * (self.image_size / 4)
    }

    pub fn layout(&self) -> ParamLayout {
        let mut l = ParamLayout::new();
        l.push("conv1.weight", &[self.conv1_channels, self.image_channels, 3, 3]);
        l.push("conv1.bias", &[self.conv1_channels]);
        l.push("conv2.weight", &[self.conv2_channels, self.conv1_channels, 3, 3]);
        l.push("conv2.bias", &[self.conv2_channels]);
        l.push("features.weight", &[self.feature_dim, self.flat_len()]);
        l.push("features.bias", &[self.feature_dim]);
        l.push("logits.weight", &[self.num_classes, self.feature_dim]);
        l.push("logits.bias", &[self.num_classes]);
        l
    }
}

const C1_W: usize = 0;
const C1_B: usize = 1;
const C2_W: usize = 2;
const C2_B: usize = 3;
const F_W: usize = 4;
const F_B: usize = 5;
const O_W: usize = 6;
const O_B: usize = 7;

#[derive(Debug, Clone)]
pub struct ClassifierTape<S> {
    xn: Vec<S>,
    h1: Vec<S>,
    p1: Vec<S>,
    h2: Vec<S>,
    p2: Vec<S>,
    f_pre: Vec<S>,
    features: Vec<S>,
}

/// Logits and penultimate features of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification<S> {
    pub logits: Vec<S>,
    pub features: Vec<S>,
}

impl<S: Scalar> Classification<S> {
    pub fn predicted(&self) -> usize {
        argmax(&self.logits)
    }
}

pub fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Batched output: `logits` is `[batch, num_classes]`, `features` is
/// `[batch, feature_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchClassification<S> {
    pub logits: Tensor<S>,
    pub features: Tensor<S>,
}

/// A frozen image classifier scoring images in `[0, 1]`.
pub trait ImageClassifier<S: Scalar> {
    fn num_classes(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn classify(&self, image: &Tensor<S>) -> Result<Classification<S>>;

    fn classify_batch(&self, images: &[Tensor<S>]) -> Result<BatchClassification<S>> {
        let (c, f) = (self.num_classes(), self.feature_dim());
        let mut logits = Vec::with_capacity(images.len() * c);
        let mut features = Vec::with_capacity(images.len() * f);
        for img in images {
            let out = self.classify(img)?;
            logits.extend(out.logits);
            features.extend(out.features);
        }
        Ok(BatchClassification {
            logits: Tensor::new(&[images.len(), c], logits)?,
            features: Tensor::new(&[images.len(), f], features)?,
        })
    }
}

/// Small convolutional classifier. Input normalisation `(x - 0.5) / 0.5` is
/// part of the differentiable forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<S> {
    arch: ClassifierArch,
    layout: ParamLayout,
    params: Vec<S>,
}

impl<S: Scalar> Classifier<S> {
    pub fn init(arch: ClassifierArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        let mut params = vec![S::zero(); layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (idx, fan_in) in [
            (C1_W, arch.image_channels * 9),
            (C2_W, arch.conv1_channels * 9),
            (F_W, arch.flat_len()),
            (O_W, arch.feature_dim),
        ] {
            init_fan_in(&mut params[layout.range(idx)], fan_in, &mut rng);
        }
        Ok(Self { arch, layout, params })
    }

    pub fn from_params(arch: ClassifierArch, params: Vec<S>) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        check_len(layout.total(), params.len())?;
        Ok(Self { arch, layout, params })
    }

    pub fn arch(&self) -> &ClassifierArch {
        &self.arch
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    fn p(&self, idx: usize) -> &[S] {
        &self.params[self.layout.range(idx)]
    }

    fn shapes(&self) -> (ConvShape, ConvShape) {
        let a = &self.arch;
        (
            ConvShape { in_channels: a.image_channels, out_channels: a.conv1_channels, height: a.image_size, width: a.image_size },
            ConvShape {
                in_channels: a.conv1_channels,
                out_channels: a.conv2_channels,
                height: a.image_size / 2,
                width: a.image_size / 2,
            },
        )
    }

    pub fn forward(&self, image: &Tensor<S>) -> Result<(Classification<S>, ClassifierTape<S>)> {
        let a = &self.arch;
        if image.shape() != a.image_shape() {
            return Err(Error::ShapeMismatch { expected: a.image_shape().iter().product(), found: image.len() });
        }
        let (s1, s2) = self.shapes();
        let half = S::lit(0.5);
        let xn: Vec<S> = image.data().iter().map(|&v| (v - half) / half).collect();
        let h1 = conv3x3_forward(self.p(C1_W), self.p(C1_B), &xn, s1);
        let p1 = avgpool2(&silu(&h1), a.conv1_channels, a.image_size, a.image_size);
        let h2 = conv3x3_forward(self.p(C2_W), self.p(C2_B), &p1, s2);
        let p2 = avgpool2(&silu(&h2), a.conv2_channels, a.image_size / 2, a.image_size / 2);
        let f_pre = linear_forward(self.p(F_W), self.p(F_B), &p2, a.feature_dim);
        let features = silu(&f_pre);
        let logits = linear_forward(self.p(O_W), self.p(O_B), &features, a.num_classes);
        let out = Classification { logits, features: features.clone() };
        Ok((out, ClassifierTape { xn, h1, p1, h2, p2, f_pre, features }))
    }

    /// Backpropagates `grad_logits`. Parameter gradients are accumulated into
    /// `grad_params` when given; the image gradient is returned when requested.
    pub fn backward(
        &self,
        tape: &ClassifierTape<S>,
        grad_logits: &[S],
        grad_params: Option<&mut [S]>,
        want_input_grad: bool,
    ) -> Result<Option<Vec<S>>> {
        let a = &self.arch;
        check_len(a.num_classes, grad_logits.len())?;
        let mut scratch;
        let grad = match grad_params {
            Some(g) => {
                check_len(self.layout.total(), g.len())?;
                g
            }
            None => {
                scratch = vec![S::zero(); self.layout.total()];
                &mut scratch[..]
            }
        };
        let l = &self.layout;
        let (s1, s2) = self.shapes();

        let (gw, gb) = split_pair_mut(grad, l.range(O_W), l.range(O_B));
        let g_f = linear_backward(self.p(O_W), &tape.features, grad_logits, gw, gb, true).unwrap_or_default();
        let g_f_pre = silu_backward(&tape.f_pre, &g_f);
        let (gw, gb) = split_pair_mut(grad, l.range(F_W), l.range(F_B));
        let g_p2 = linear_backward(self.p(F_W), &tape.p2, &g_f_pre, gw, gb, true).unwrap_or_default();
        let g_a2 = avgpool2_backward(&g_p2, a.conv2_channels, a.image_size / 2, a.image_size / 2);
        let g_h2 = silu_backward(&tape.h2, &g_a2);
        let (gw, gb) = split_pair_mut(grad, l.range(C2_W), l.range(C2_B));
        let g_p1 = conv3x3_backward(self.p(C2_W), &tape.p1, &g_h2, s2, gw, gb, true).unwrap_or_default();
        let g_a1 = avgpool2_backward(&g_p1, a.conv1_channels, a.image_size, a.image_size);
        let g_h1 = silu_backward(&tape.h1, &g_a1);
        let (gw, gb) = split_pair_mut(grad, l.range(C1_W), l.range(C1_B));
        let g_xn = conv3x3_backward(self.p(C1_W), &tape.xn, &g_h1, s1, gw, gb, want_input_grad);
        let two = S::lit(2.0);
        Ok(g_xn.map(|g| g.into_iter().map(|v| v * two).collect()))
    }
}

impl<S: Scalar> ImageClassifier<S> for Classifier<S> {
    fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    fn feature_dim(&self) -> usize {
        self.arch.feature_dim
    }

    fn classify(&self, image: &Tensor<S>) -> Result<Classification<S>> {
        self.forward(image).map(|(c, _)| c)
    }
}

/// Softmax cross-entropy of one logit row and its gradient.
pub fn cross_entropy<S: Scalar>(logits: &[S], label: usize) -> Result<(S, Vec<S>)> {
    if label >= logits.len() {
        return Err(Error::ClassOutOfRange { class: label, num_classes: logits.len() });
    }
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    let loss = total.ln() + max - logits[label];
    let mut grad: Vec<S> = exps.into_iter().map(|e| e / total).collect();
    grad[label] -= S::one();
    Ok((loss, grad))
}
