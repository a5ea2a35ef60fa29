use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    /// Optimistic concurrency check failed at commit; the caller should retry.
    #[error("transaction conflict, retry")]
    Conflict,
    #[error("transaction is closed")]
    TransactionClosed,
    #[error("mutation attempted on a read-only transaction")]
    ReadOnlyTransaction,
    #[error("value of {0} bytes exceeds the maximum value size of {1} bytes")]
    ValueTooLarge(usize, usize),
    #[error("{0} not found")]
    NotFound(String),
    #[error("duplicate name: {0}")]
    DuplicateName(String),
    #[error("malformed cache value: {0}")]
    MalformedValue(String),
    #[error("missing wildcard property {0}")]
    MissingWildcardProperty(String),
    #[error("wildcard binding does not match template: {0}")]
    BindingMismatch(String),
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("invalid template state for {0}")]
    InvalidState(String),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::InvalidSpec(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
