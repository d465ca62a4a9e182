//! Error type shared by every smartline module.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violated a documented precondition or invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Machine name is not one of the registered machines.
    #[error("unknown machine: {0}")]
    UnknownMachine(String),

    #[error("out-of-order tick for {machine}: got {got}, last stored {last}")]
    Ordering { machine: String, got: u64, last: u64 },

    #[error("replay error at line {line}: {message}")]
    Replay { line: usize, message: String },

    #[error("log integrity error at record {record}: expected sequence {expected}, found {found}")]
    Integrity { record: usize, expected: u64, found: u64 },

    #[error("simulation exhausted after {ticks} ticks")]
    Exhausted { ticks: u64 },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("remote service error: {0}")]
    Remote(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn from_json(err: serde_json::Error) -> Self {
        Error::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }

    pub(crate) fn from_toml(err: toml::de::Error) -> Self {
        Error::Config(err.to_string())
    }
}
