use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::cross_entropy;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// What the fine-tuning minimises for each scored image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdversarialObjective {
    /// Negative cross-entropy of the true class: pushes images of the
    /// conditioning class away from it.
    #[default]
    Untargeted,
    /// Cross-entropy toward a chosen label: pulls images toward it.
    Targeted { label: usize },
}

impl AdversarialObjective {
    /// Loss and logit gradient for one image whose true class is `y`.
    pub fn loss_and_grad<S: Scalar>(&self, logits: &[S], y: usize) -> Result<(S, Vec<S>)> {
        if y >= logits.len() {
            return Err(Error::ClassOutOfRange { class: y, num_classes: logits.len() });
        }
        match *self {
            AdversarialObjective::Untargeted => {
                let (ce, g) = cross_entropy(logits, y)?;
                Ok((-ce, g.into_iter().map(|v| -v).collect()))
            }
            AdversarialObjective::Targeted { label } => cross_entropy(logits, label),
        }
    }
}

/// `-CE(softmax(logits), y)` averaged over the rows of a `[batch, C]` tensor.
pub fn adversarial_loss<S: Scalar>(logits: &Tensor<S>, y: usize) -> Result<S> {
    adversarial_loss_and_grad(logits, y).map(|(l, _)| l)
}

/// Batch-mean negative cross-entropy and its gradient with respect to the logits.
pub fn adversarial_loss_and_grad<S: Scalar>(logits: &Tensor<S>, y: usize) -> Result<(S, Tensor<S>)> {
    let &[batch, classes] = logits.shape() else {
        return Err(Error::InvalidArgument("logits must be [batch, classes]".into()));
    };
    if batch == 0 {
        return Err(Error::InvalidArgument("empty logits batch".into()));
    }
    let inv = S::lit(1.0 / batch as f64);
    let mut total = S::zero();
    let mut grad = Vec::with_capacity(batch * classes);
    for row in logits.data().chunks(classes) {
        let (l, g) = AdversarialObjective::Untargeted.loss_and_grad(row, y)?;
        total += l;
        grad.extend(g.into_iter().map(|v| v * inv));
    }
    Ok((total * inv, Tensor::new(logits.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn uniform_logits_give_minus_ln_c() {
        let l = adversarial_loss(&Tensor::<f64>::zeros(&[3, 10]), 4).unwrap();
        assert!((l + 10f64.ln()).abs() < 1e-12);
        assert!((l - -2.302585).abs() < 1e-6);
    }

    #[test]
    fn confident_correct_class_approaches_zero_from_below() {
        let l = adversarial_loss(&Tensor::new(&[1, 3], vec![50.0f64, 0.0, 0.0]).unwrap(), 0).unwrap();
        assert!(l <= 0.0 && l > -1e-20);
    }

    #[test]
    fn two_logit_hand_value() {
        // ln(e^2 / (e^2 + 1)) evaluated in double precision
        let l = adversarial_loss(&Tensor::new(&[1, 2], vec![2.0f64, 0.0]).unwrap(), 0).unwrap();
        assert!((l - -0.126_928_011_042_973).abs() < 1e-12, "{l}");
    }

    #[test]
    fn gradient_and_errors() {
        let logits = Tensor::new(&[2, 3], vec![0.3f64, -1.0, 2.0, 1.5, 0.2, -0.7]).unwrap();
        let (_, g) = adversarial_loss_and_grad(&logits, 1).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            let (mut p, mut m) = (logits.clone(), logits.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (adversarial_loss(&p, 1).unwrap() - adversarial_loss(&m, 1).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
        assert!(adversarial_loss(&logits, 3).is_err());
        assert!(adversarial_loss(&Tensor::<f64>::zeros(&[6]), 0).is_err());
    }

    #[test]
    fn targeted_objective_is_plain_cross_entropy() {
        let logits = [0.5f64, 1.5, -0.2];
        let (l, _) = AdversarialObjective::Targeted { label: 2 }.loss_and_grad(&logits, 0).unwrap();
        assert!((l - cross_entropy(&logits, 2).unwrap().0).abs() < 1e-15);
    }
}
