use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ids, path validity).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("no admissible alignment path (log-likelihood is -inf)")]
    NoAdmissiblePath,

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data generation error: {0}")]
    Generation(String),

    #[error("numerical divergence at step {step}: {message}")]
    Divergence { step: usize, message: String },

    #[error("acceptance criterion failed: {0}")]
    Criterion(String),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
