//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by data ingestion, model fitting, and scenario design.
#[derive(Debug, Error)]
pub enum Error {
    /// Configuration value out of range or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// Input data missing, malformed, or insufficient.
    #[error("data error: {0}")]
    Data(String),

    /// A numeric routine produced a non-finite or degenerate result.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } | Error::Csv { .. } => 3,
            Error::Numeric(_) | Error::Json(_) => 4,
        }
    }
}
