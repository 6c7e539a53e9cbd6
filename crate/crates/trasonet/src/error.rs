use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid comparison matrix: {0}")]
    ComparisonMatrix(String),
    #[error("comparison matrices above 9x9 are unsupported (random index table ends at n=9), got n={0}")]
    UnsupportedDimension(usize),
    #[error("incomplete rulebase: {0}")]
    Rulebase(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
