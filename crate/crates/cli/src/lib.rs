//! Command-line front end of the half-cell solver: case files, VTK and CSV
//! output, density snapshots, checkpoints and run manifests.

pub mod commands;
pub mod config_file;
pub mod error;
pub mod manifest;
pub mod snapshot;
pub mod vtk;

pub use error::{CliError, CliResult};
