use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum NyError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear system is singular even with jitter {jitter:e}")]
    Singular { jitter: f64 },

    #[error("degenerate leverage: H[{index}, {index}] = {value} is not below 1")]
    DegenerateLeverage { index: usize, value: f64 },

    #[error("degenerate trace: tr(I - H) = {0}")]
    DegenerateTrace(f64),

    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),

    #[error("numerical failure in {term}: {detail}")]
    Numerical { term: String, detail: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NyError>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NyError::DimensionMismatch(msg.into()))
}
