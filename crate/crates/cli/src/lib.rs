//! Library half of the `bubble-reduction` command-line tool: configuration,
//! the seven commands and the report writer.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use commands::{run, COMMANDS};
pub use config::{ProfileSpec, RunConfig, RunOptions};
pub use error::CliError;
pub use report::{RunReport, Timing};
