use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the training laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor or model shapes.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A numeric hyperparameter outside its domain (temperature, lr, epoch range, ...).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// An index (label, sample id) outside its valid range.
    #[error("index error: {0}")]
    Index(String),

    /// Input data that violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A training-policy rule was broken (e.g. writing long-term teachers mid mini-generation).
    #[error("policy error: {0}")]
    Policy(String),

    /// Malformed binary or text file.
    #[error("format error: {0}")]
    Format(String),

    /// Bad experiment configuration, tagged with the 1-based line number.
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
