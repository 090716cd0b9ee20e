//! Configuration, dispatch and persistence for the `spde-holder` tool.

pub mod checks;
pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, ConfigError, RunConfig};
pub use run::{dispatch, Command, Invocation, Outcome, RunError};
