//! The `gtp` command-line tool.

pub mod commands;
pub mod error;
pub mod output;
pub mod spec;

pub use commands::run;
pub use error::{CliError, CliResult};
pub use spec::{Cli, RunSpec};
