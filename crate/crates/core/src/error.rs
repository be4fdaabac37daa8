use thiserror::Error;

/// Errors produced by the estimation, detection and simulation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("singular subset covariance")]
    SingularSubset,

    #[error(
        "all MCD starts produced singular subset covariances; use a diagonal robust-scale target"
    )]
    AllStartsSingular,

    #[error("coordinate {0} is constant")]
    ConstantCoordinate(usize),

    #[error("neighborhood {index} has {size} observations, needs at least {required}; use a coarser grid")]
    NeighborhoodTooSmall {
        index: usize,
        size: usize,
        required: usize,
    },

    #[error("non-positive-definite smoothed matrix in neighborhood {0}")]
    NeighborhoodNotPd(usize),

    #[error("log-determinant {0} overflows the determinant sum")]
    DeterminantOverflow(f64),

    #[error("exhaustive search over {0} combinations exceeds the guard")]
    CombinatorialGuard(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
