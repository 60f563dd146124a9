//! Command-line front end: matrix files, JSON reports and subcommands.
pub mod config;
pub mod format;
pub mod report;
pub mod run;

pub use config::{Cli, Command, RunConfig};
pub use format::{parse_matrix_file, parse_matrix_str, print_matrix_file, MatrixFile, ParseError};
pub use run::{exit, run, CliError};
