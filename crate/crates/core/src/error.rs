use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CribError>;

#[derive(Debug, Error)]
pub enum CribError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite field at time step {step}, depth slice {depth}")]
    NumericalFailure { step: usize, depth: usize },

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("signal-to-noise ratio undefined: {0}")]
    UndefinedSnr(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("scenario `{scenario}` failed: {source}")]
    Scenario {
        scenario: String,
        #[source]
        source: Box<CribError>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CribError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CribError::InvalidArgument(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CribError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Strips scenario context to get at the underlying failure.
    pub fn root(&self) -> &CribError {
        match self {
            CribError::Scenario { source, .. } => source.root(),
            other => other,
        }
    }
}
