use thiserror::Error;

/// Errors raised across quantization, compilation and evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Caller supplied data that violates an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Inconsistent configuration, e.g. mismatched bit-widths or a missing cost entry.
    #[error("configuration error: {0}")]
    Config(String),
    /// A runtime value left the domain the bit-width analysis provisioned for it.
    #[error("contract violation: {0}")]
    Contract(String),
    /// The ensemble failed validation and cannot be compiled.
    #[error("cannot compile invalid ensemble: {}", .0.join("; "))]
    Compile(Vec<String>),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
