//! Experiment orchestration for single-functional source reconstruction:
//! configuration, measurement synthesis, noise, inversion runs and output.

pub mod config;
pub mod output;
pub mod pipeline;
pub mod runner;

pub use config::ExperimentConfig;
pub use runner::{run_experiment, RunReport};
