//! Command implementations behind the `ratein` binary, exposed as a library
//! so integration tests can drive them directly.

pub mod commands;
pub mod config;

use std::fmt;

/// Errors split by exit code: configuration/usage problems exit 2, runtime
/// failures exit 3.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    /// Core errors surfaced during validation are configuration errors.
    pub fn from_config_err(e: ratein_core::Error) -> Self {
        CliError::Config(e.to_string())
    }

    /// Core errors surfaced mid-run are runtime failures.
    pub fn from_runtime_err(e: ratein_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}
