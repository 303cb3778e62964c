//! Command-line front end for `sctc`: run configuration, CSV ingestion,
//! output tables and the `simulate` / `fit` / `estimate` / `benchmark` /
//! `diagnose` subcommands.

pub mod cli;
pub mod commands;
pub mod config;
pub mod emit;
pub mod error;
pub mod ingest;
pub mod table;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use ingest::{ingest, Dataset};
