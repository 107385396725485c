use thiserror::Error;

#[derive(Debug, Error)]
pub enum RcbError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("arm index {arm} out of range for {arms} arms")]
    ArmOutOfRange { arm: usize, arms: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{op} called in phase {phase}")]
    WrongPhase { op: &'static str, phase: &'static str },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("schema error in column `{column}`: {reason}")]
    Schema { column: String, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RcbError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> RcbError {
    RcbError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
