//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any part of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A data file is missing a required column.
    #[error("schema error: missing column '{column}' in {path}")]
    Schema { path: String, column: String },

    /// A single data record is malformed (bad label, bad span, ...).
    #[error("record error at row {row}: {message}")]
    Record { row: usize, message: String },

    /// The file itself could not be parsed (quoting, encoding, ...).
    #[error("parse error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Parse { row: Option<usize>, message: String },

    /// An argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A char span could not be mapped onto any token.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// Model fitting failed (degenerate training data, empty vocabulary, ...).
    #[error("fit error: {0}")]
    Fit(String),

    /// A numeric computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Configuration file or model configuration is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// No valid decode exists for the given input.
    #[error("decode error: {0}")]
    Decode(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn record(row: usize, msg: impl Into<String>) -> Self {
        Error::Record {
            row,
            message: msg.into(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
