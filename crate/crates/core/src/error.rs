use thiserror::Error;

/// Errors surfaced by the pipeline. The CLI maps `Config` to exit code 2 and
/// everything data-related to exit code 3.
#[derive(Error, Debug)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("insufficient history: target {target} needs {needed} earlier intervals")]
    InsufficientHistory { target: usize, needed: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{dropped} record(s) fell outside the grid bounds")]
    OutOfBounds { dropped: usize },
    #[error("empty cluster {0}")]
    EmptyCluster(usize),
    #[error("infeasible balance: {0}")]
    InfeasibleBalance(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("empty split: {0}")]
    EmptySplit(String),
    #[error("config hash mismatch: checkpoint {found}, expected {expected}")]
    HashMismatch { expected: String, found: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
