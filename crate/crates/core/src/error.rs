use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("kernel matrix not positive definite even with jitter {jitter:e}")]
    SingularKernel { jitter: f64 },

    #[error("step size fell below {min:e} without meeting the acceptance criterion")]
    DegenerateGeometry { min: f64 },

    #[error("batch-means covariance is singular")]
    DegenerateEstimator,

    #[error("conjugate gradients stalled after {iterations} iterations (relative residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("trajectory diverged: non-finite log density or gradient")]
    DivergentTrajectory,

    #[error("non-finite log density at the initial point")]
    NonFiniteStart,

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
