//! Experiment runner and automobile-data pipeline for `deepchoice`.
//!
//! The `deepchoice` binary is a thin wrapper around [`run::run_experiment`];
//! everything it does is reachable from this library.

pub mod autos;
pub mod config;
pub mod empirical;
pub mod manifest;
pub mod run;

pub use config::{Command, ExperimentConfig};
pub use run::{exit_code, run_experiment, RunSummary};
