//! Library side of the `elastic-cp` command-line tool: dataset files, result
//! documents and the commands themselves.

pub mod commands;
pub mod dataset;
pub mod document;
pub mod error;
pub mod summary;

pub use commands::{run, Cli};
pub use error::{CliError, CliResult};
