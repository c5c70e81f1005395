//! Command-line pipeline around `grouplm-core`: file formats, checkpoints,
//! run manifests and the `grouplm` subcommands.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod error;
pub mod formats;
pub mod manifest;

pub use cli::Cli;
pub use commands::run;
pub use error::{CliError, CliResult};
