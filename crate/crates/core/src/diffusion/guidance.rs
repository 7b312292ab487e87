use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Anything that predicts the noise component of a latent.
///
/// `class == None` selects the unconditional (NULL) branch.
pub trait NoiseModel<S: Scalar> {
    /// `[channels, height, width]` of the images the model denoises.
    fn image_shape(&self) -> [usize; 3];
    fn num_classes(&self) -> usize;
    fn predict_eps(&self, x_t: &Tensor<S>, t: usize, class: Option<usize>) -> Result<Tensor<S>>;
}

impl<S: Scalar, M: NoiseModel<S> + ?Sized> NoiseModel<S> for &M {
    fn image_shape(&self) -> [usize; 3] {
        (**self).image_shape()
    }
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn predict_eps(&self, x_t: &Tensor<S>, t: usize, class: Option<usize>) -> Result<Tensor<S>> {
        (**self).predict_eps(x_t, t, class)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conditioning {
    pub class: Option<usize>,
    pub guidance_scale: f64,
}

impl Conditioning {
    pub const DEFAULT_GUIDANCE: f64 = 3.0;

    pub fn class(class: usize, guidance_scale: f64) -> Self {
        Self { class: Some(class), guidance_scale }
    }

    pub fn unconditional() -> Self {
        Self { class: None, guidance_scale: 0.0 }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !self.guidance_scale.is_finite() || self.guidance_scale < 0.0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "guidance scale must be finite and nonnegative, got {}",
                self.guidance_scale
            )));
        }
        match self.class {
            Some(c) if c >= num_classes => Err(Error::ClassOutOfRange { class: c, num_classes }),
            _ => Ok(()),
        }
    }

    /// Weights `(w_cond, w_uncond)` with `eps = w_cond * eps_cond + w_uncond * eps_uncond`.
    pub fn mixing_weights(&self) -> (f64, f64) {
        match self.class {
            None => (0.0, 1.0),
            Some(_) => (self.guidance_scale, 1.0 - self.guidance_scale),
        }
    }
}

/// Classifier-free guidance: `eps_uncond + scale * (eps_cond - eps_uncond)`.
///
/// Scale 1 returns the conditional prediction and scale 0 the unconditional
/// one without evaluating the unused branch.
pub fn guided_eps<S: Scalar, M: NoiseModel<S> + ?Sized>(
    model: &M,
    x_t: &Tensor<S>,
    t: usize,
    cond: &Conditioning,
) -> Result<Tensor<S>> {
    cond.validate(model.num_classes())?;
    let class = match cond.class {
        None => return model.predict_eps(x_t, t, None),
        Some(c) => c,
    };
    if cond.guidance_scale == 1.0 {
        return model.predict_eps(x_t, t, Some(class));
    }
    let uncond = model.predict_eps(x_t, t, None)?;
    if cond.guidance_scale == 0.0 {
        return Ok(uncond);
    }
    let condi = model.predict_eps(x_t, t, Some(class))?;
    let w = S::lit(cond.guidance_scale);
    uncond.zip_map(&condi, |u, c| u + w * (c - u))
}
