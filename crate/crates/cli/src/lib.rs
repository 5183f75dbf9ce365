//! Command-line pipeline for coarse-to-fine scenario mining.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 at least
//! one query flagged for review.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod pipeline;

pub use commands::{run, Cli};
pub use config::PipelineConfig;
pub use error::CliError;
