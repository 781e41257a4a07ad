//! Experiment harness behind the `dpsecmul` binary.

pub mod config;
pub mod experiments;
pub mod report;

pub use config::{ConfigSources, Experiment, ExperimentConfig};
pub use report::{Check, Report};
