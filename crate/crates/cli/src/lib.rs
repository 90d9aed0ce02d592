//! Configuration parsing and command dispatch for the `aoaloc` binary.

pub mod commands;
pub mod config;

pub use commands::{run_command, CliError};
pub use config::{parse_config, CliConfig, Command, ConfigError};
