//! Experiment runner for the `loss-gap` library.
//!
//! Each subcommand reads one JSON configuration, runs deterministically from its
//! master seed, and writes CSV or JSON files stamped with provenance metadata.

pub mod commands;
pub mod config;
pub mod error;
pub mod meta;

pub use commands::RunOptions;
pub use config::{ExperimentConfig, LoadedConfig};
pub use error::{CliError, CliResult};
