use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate instance: {0}")]
    DegenerateInstance(String),

    #[error("normalization unsupported for regularizer {0}")]
    UnsupportedNormalization(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("estimator inconsistency: score {score} exceeds bound {bound}")]
    EstimatorInconsistency { score: f64, bound: f64 },

    #[error("theorem not applicable: {0}")]
    Applicability(String),

    #[error("optimizer failure: {0}")]
    OptimizerFailure(String),

    #[error("construction error: {0}")]
    Construction(String),

    #[error("sample budget exceeded: m > {cap}")]
    Budget {
        cap: usize,
        /// `(m, failure rate)` pairs evaluated before giving up.
        partial: Vec<(usize, f64)>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
