//! `datesort` command-line driver: configuration, stage commands and run
//! manifests.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use commands::{execute, Command, Invocation};
pub use config::RunConfig;
pub use error::{CliError, Result};
