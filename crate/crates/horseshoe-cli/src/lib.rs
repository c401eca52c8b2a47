//! Experiment drivers behind the `horseshoe-lab` command.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{ConfigError, ExperimentConfig};
pub use experiments::{run, Command, Context, Outcome, RunError};
