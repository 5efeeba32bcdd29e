use thiserror::Error;

/// Errors raised by the detectors, estimators and I/O layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("degenerate propensity: no reassignment with both domains populated after {attempts} draws")]
    DegeneratePropensity { attempts: usize },

    #[error("rejection subsampling retained {retained} reference rows (need at least 2)")]
    ResampleFailure { retained: usize },

    #[error("input error at {location}: {message}")]
    Input { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
