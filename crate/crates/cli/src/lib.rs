//! Command-line layer of `cwcf`: configuration resolution and the
//! `train`, `eval`, `sweep`, `baseline`, `oracle` and `report` commands.

pub mod commands;
pub mod config;

pub use commands::{CliError, Result};
pub use config::{ConfigError, ResolvedConfig};
