//! Command-line front end: container files, run configuration and the
//! `gen-data`, `gen-mask`, `recon`, `bench` and `eval` commands.

pub mod cli;
pub mod commands;
pub mod config;
pub mod container;
mod error;

pub use cli::Cli;
pub use commands::run;
pub use error::CliError;
