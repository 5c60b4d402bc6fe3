use thiserror::Error;

/// Errors raised by the harness library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("samples must have equal sizes, got {0} and {1}")]
    UnequalSizes(usize, usize),

    #[error("too few points: need at least {needed}, got {found}")]
    TooFewPoints { needed: usize, found: usize },

    #[error("matrix factorization failed: {0}")]
    FactorizationFailure(String),

    #[error("deformation {0} is not invertible")]
    NotInvertible(&'static str),

    #[error("singular point: coordinate {index} is zero")]
    SingularPoint { index: usize },

    #[error("feature {0} is constant")]
    ConstantFeature(usize),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
