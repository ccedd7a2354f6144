use thiserror::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, CoreError>;

/// Errors surfaced by the pipeline.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Structural mismatch between inputs (lengths, shapes, missing columns).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Configuration that fails validation before any computation starts.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A numeric invariant was violated (NaN/Inf where finite values are required).
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl CoreError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        CoreError::InvalidConfig(msg.into())
    }

    pub(crate) fn non_finite(msg: impl Into<String>) -> Self {
        CoreError::NonFinite(msg.into())
    }
}
