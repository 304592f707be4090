use thiserror::Error;

/// Coarse failure class, used for CLI exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Io,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("ill-posed spectral division: denominator {magnitude:e} at frequency ({row}, {col})")]
    IllPosed {
        row: usize,
        col: usize,
        magnitude: f64,
    },

    #[error("metric undefined at zero MSE")]
    ZeroMse,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Codec(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::Io(_) | Error::Codec(_) | Error::Json(_) => ErrorCategory::Io,
            Error::InvalidInput(_) | Error::DimensionMismatch { .. } => ErrorCategory::Config,
            Error::DegenerateKernel(_)
            | Error::NonFinite(_)
            | Error::IllPosed { .. }
            | Error::ZeroMse => ErrorCategory::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
