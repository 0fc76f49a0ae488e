use thiserror::Error;

/// Errors returned by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller-supplied data or configuration is malformed.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Shapes of two arguments do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A covariance matrix failed its positive-definite factorization.
    #[error("covariance of component {component} is not positive definite")]
    NotPositiveDefinite { component: usize },

    /// A responsibility column summed to (numerically) zero, which signals an
    /// upstream posterior collapse.
    #[error("degenerate responsibility column for component {component}")]
    DegenerateResponsibility { component: usize },

    /// Training produced a non-finite loss.
    #[error("training aborted: loss is not finite at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    /// An operation that requires ground-truth instances got none.
    #[error("no ground-truth instances in the instance mask")]
    NoInstances,

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// True when the error is the caller's fault (maps to CLI exit code 2).
    pub fn is_invalid_input(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_) | Error::DimensionMismatch(_) | Error::Checkpoint(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
