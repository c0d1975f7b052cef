use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate source rule: x'(q) vanishes at q = {quantile}")]
    DegenerateSource { quantile: f64 },

    #[error("degenerate rule: {0}")]
    DegenerateRule(String),

    #[error("payment format mismatch: expected {expected}, got {found}")]
    FormatMismatch { expected: String, found: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}

impl Error {
    /// Module a failure is attributed to in diagnostics.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Argument(_) | Error::Parse(_) => "input",
            Error::DegenerateSource { .. } => "estim",
            Error::DegenerateRule(_) | Error::FormatMismatch { .. } => "equil",
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => "io",
        }
    }
}
