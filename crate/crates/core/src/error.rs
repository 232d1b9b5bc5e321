use thiserror::Error;

/// Errors produced by the spvar library.
#[derive(Debug, Error)]
pub enum SpvarError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index out of range: {what} = {index}, valid range {lo}..={hi}")]
    IndexOutOfRange { what: &'static str, index: usize, lo: usize, hi: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("model is not stationary: {0}")]
    NotStationary(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("selection failed: {0}")]
    Selection(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SpvarError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(SpvarError::InvalidArgument(msg.into()))
}
