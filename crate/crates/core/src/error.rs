use thiserror::Error;

/// Errors raised across the discretization, assembly and solver layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid regularity C^{regularity} for degree {degree}")]
    InvalidRegularity { degree: usize, regularity: i64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular system: pivot {pivot:e} at step {step} (threshold {threshold:e})")]
    SingularSystem {
        step: usize,
        pivot: f64,
        threshold: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),
}

pub type Result<T> = std::result::Result<T, Error>;
