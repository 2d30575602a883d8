use thiserror::Error;

/// Errors raised by model construction, fitting and I/O.
#[derive(Debug, Error)]
pub enum GscaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl GscaError {
    /// Process exit code used by the command-line driver.
    ///
    /// 1 = usage error, 2 = data error, 3 = numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            GscaError::InvalidArgument(_) => 1,
            GscaError::ShapeMismatch(_)
            | GscaError::InvalidData(_)
            | GscaError::Io(_)
            | GscaError::Csv(_)
            | GscaError::Json(_) => 2,
            GscaError::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, GscaError>;

pub(crate) fn invalid(msg: impl Into<String>) -> GscaError {
    GscaError::InvalidArgument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> GscaError {
    GscaError::ShapeMismatch(msg.into())
}
