use thiserror::Error;

/// Errors raised across the modelling pipeline.
#[derive(Debug, Error)]
pub enum ApcError {
    #[error("index out of range: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("constraint is rank deficient: expected rank {expected}, detected {detected}")]
    RankDeficient { expected: usize, detected: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("inconsistent table geometry: {0}")]
    Geometry(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ApcError>;
