//! Command-line harness: instance generation, training, evaluation,
//! benchmarking and the scenario exposure report.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod exposure;

pub use cli::Cli;
pub use commands::run;
pub use error::CliError;
