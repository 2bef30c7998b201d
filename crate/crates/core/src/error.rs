use thiserror::Error;

/// Errors raised by the dynamics, integration and analysis layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum KhepError {
    #[error("collision: homogeneous norm {rho:e} at or below threshold")]
    Collision { rho: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite state")]
    NonFinite,

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    StepFailure { iterations: usize, residual: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("classification failed: {0}")]
    Classification(String),

    #[error("degenerate case: {0}")]
    Degenerate(String),

    #[error("time {t} lies at or beyond the collision time {t_col}")]
    PastCollision { t: f64, t_col: f64 },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("io: {0}")]
    Io(String),

    #[error("format: {0}")]
    Format(String),
}

impl From<std::io::Error> for KhepError {
    fn from(e: std::io::Error) -> Self {
        KhepError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for KhepError {
    fn from(e: serde_json::Error) -> Self {
        KhepError::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, KhepError>;
