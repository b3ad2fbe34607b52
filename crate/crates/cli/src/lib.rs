//! Command implementations behind the `odesynth` binary.

pub mod commands;
pub mod config;

use thiserror::Error;

pub use commands::{evaluate, generate, make_data, train};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] odesynth::Error),
}

impl CliError {
    /// 2 for usage or input problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}
