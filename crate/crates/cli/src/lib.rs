//! Scenario files, trajectory CSV, phase portraits and the subcommands of the
//! `cbfsim` binary.

pub mod commands;
pub mod csv;
pub mod error;
pub mod scenario_file;
pub mod svg;

pub use error::{CliError, CliResult};
