//! Command-line harness: reads model files, runs the analyses and sweeps of
//! the `maxacc` library, and writes JSON, CSV and SVG artifacts.

pub mod commands;
pub mod error;
pub mod model_file;
pub mod report;

pub use commands::{run, Cli};
pub use error::{exit, CliError};
pub use model_file::ModelFile;
