//! Experiment harness: configuration, studies and output writers behind the `mfy` CLI.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod studies;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
