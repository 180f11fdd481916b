use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Contract(_) => 4,
        }
    }
}

impl From<fhe_tree::Error> for CliError {
    fn from(e: fhe_tree::Error) -> Self {
        match e {
            fhe_tree::Error::Config(m) => CliError::Usage(m),
            fhe_tree::Error::Contract(m) => CliError::Contract(m),
            fhe_tree::Error::InvalidInput(m) => CliError::Data(m),
            fhe_tree::Error::Compile(v) => CliError::Data(format!("invalid model: {}", v.join("; "))),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
