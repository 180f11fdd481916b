//! Command implementations behind the `fhe-tree` binary.
//!
//! Every command is a plain function over paths and options so the
//! experiments can also be driven in-process.

pub mod commands;
pub mod cv;
pub mod data;
pub mod error;
pub mod experiment;

pub use error::{CliError, CliResult};

/// Version tag written into every report CSV row.
pub const SCHEMA_VERSION: u32 = 1;
