//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input data (bad file contents, out-of-range fields, ...).
    /// Carries enough position information to locate the offending record.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// A value or combination of values violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Operation applied to data of the wrong shape or representation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Training failed (e.g. the loss diverged to NaN).
    #[error("training error: {0}")]
    Training(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Error::Validation(message.into())
    }

    pub fn shape(message: impl Into<String>) -> Self {
        Error::Shape(message.into())
    }

    /// True for errors caused by bad input rather than by the runtime itself.
    /// The CLI maps these to exit code 1 and everything else to 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation(_) | Error::Shape(_)
        )
    }
}
