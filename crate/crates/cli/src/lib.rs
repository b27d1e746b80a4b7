//! Command-line front end of the trajectory-lifting pipeline.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod plot;

pub use commands::{execute, Cli, CliError};
pub use config::{ConfigError, PipelineConfig};
