//! Experiment harness around `vflkit-core`: TOML configs with dotted
//! overrides, seeded runs and sweeps, text checkpoints, CSV datasets,
//! result records and reports.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod report;
pub mod selftest;
pub mod tabular;

pub use config::ExperimentConfig;
pub use error::{AppError, AppResult};
