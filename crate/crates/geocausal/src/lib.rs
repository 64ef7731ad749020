//! CSV pipeline, parallel simulation harness and command line on top of
//! [`geocausal_core`].

pub use geocausal_core as core;

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod parallel;
pub mod report;

pub use error::{CliError, CliResult};
