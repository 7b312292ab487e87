use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: expected {expected} elements, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("timestep {t} out of range 0..={max}")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("class index {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("inference plan is empty")]
    EmptyPlan,
    #[error("invalid inference plan: {0}")]
    InvalidPlan(String),
    #[error("dataset has no samples for this split")]
    EmptyDataset,
    #[error("covariance is degenerate (smallest eigenvalue {min_eigenvalue:e}); add regularization")]
    DegenerateCovariance { min_eigenvalue: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("attack diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { expected, found })
    }
}
