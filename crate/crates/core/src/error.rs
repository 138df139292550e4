use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("stale tape: variable was recorded on tape {found}, expected tape {expected}")]
    StaleTape { expected: u32, found: u32 },

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: String, step: usize },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error(
        "non-finite loss at iteration {iteration} (last finite loss: {last_finite:?}); \
         try a smaller learning rate"
    )]
    NonFiniteLoss { iteration: usize, last_finite: Option<f64> },

    #[error(
        "trajectory {trajectory} left the admissible region at step {step}: {reason}; \
         reduce the learning rate"
    )]
    InvalidTrajectory {
        trajectory: usize,
        step: usize,
        reason: String,
    },

    #[error("fractional noise covariance is not positive definite (H = {hurst}, n = {steps})")]
    CovarianceNotPositive { hurst: f64, steps: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
