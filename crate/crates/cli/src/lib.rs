//! Configuration and subcommands of the `signalmine` binary.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{run, Command};
pub use config::PipelineConfig;
pub use error::{CliError, CliResult, ErrorClass};
