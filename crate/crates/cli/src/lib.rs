//! Command-line front end: configuration, experiment runs, diagnostics and file output.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod output;

pub use config::{parse_config, parse_config_str, ExperimentConfig};
pub use error::{CliError, CliResult};
