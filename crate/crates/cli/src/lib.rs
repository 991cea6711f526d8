//! Config-driven front end: parse a run config, execute the pipeline,
//! write artifacts.

pub mod config;
pub mod pipeline;

pub use config::{validate_config, ConfigError, RunConfig};
pub use pipeline::{exit_code_for, run, RunOptions, RunReport};
