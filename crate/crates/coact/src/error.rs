//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide error enum. Variants map onto the CLI exit-code classes:
/// configuration/validation, I/O, and failed numeric checks.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not conform.
    #[error("dimension mismatch: {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: String,
        actual: String,
    },

    /// Invalid configuration (bad key, inconsistent layer dims, bad spec).
    #[error("configuration error: {0}")]
    Config(String),

    /// A record or schema file failed to parse.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A value violates the declared schema (out-of-range ID, unknown field).
    #[error("schema error: {0}")]
    Schema(String),

    /// Embedding lookup outside the table.
    #[error("index error: field `{field}`: id {id} out of range (cardinality {cardinality})")]
    Index {
        field: String,
        id: u32,
        cardinality: u32,
    },

    /// Non-finite values or probabilities outside (0,1).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Misuse of an API (e.g. backward on a node that is not a scalar loss).
    #[error("usage error: {0}")]
    Usage(String),

    /// A metric is undefined for the given input (e.g. single-class AUC).
    #[error("undefined metric: {0}")]
    Metric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dimension(
        context: impl Into<String>,
        expected: impl Into<String>,
        actual: impl Into<String>,
    ) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
