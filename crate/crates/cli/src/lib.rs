//! Command-line driver for geomot: config handling, the seeded end-to-end pipeline and
//! one subcommand per library module.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use pipeline::{run_experiment, Manifest};
