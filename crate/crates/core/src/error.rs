use thiserror::Error;

pub type Result<T, E = MarketError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("{what} index {index} out of range (have {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-positive value {value} inside a logarithm ({what})")]
    NonPositiveLog { what: String, value: f64 },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("solver failed: {0}")]
    SolverFailed(String),

    #[error("brute-force oracle supports at most 2 active pairs (got {0})")]
    TooManyActivePairs(usize),

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("empty trace")]
    EmptyTrace,

    #[error("scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
