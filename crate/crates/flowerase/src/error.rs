use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node {node}: expected {expected}, got {actual}")]
    Shape {
        node: usize,
        expected: String,
        actual: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("config error (line {line}): {msg}")]
    Config { line: usize, msg: String },
    #[error("gate failure: {0}")]
    Gate(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
