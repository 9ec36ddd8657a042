//! Experiment runner for predictive sample assignment: benchmark
//! generation, training runs, score evaluation and run comparison.

pub mod commands;
pub mod config;
pub mod error;
pub mod tables;

pub use config::RunConfig;
pub use error::CliError;
