//! Model-file front end: load a TOML model, classify it, run the constraint
//! ladder and integrate the reduced system.

pub mod commands;
pub mod error;
pub mod model;
pub mod report;

pub use commands::{RunOptions, SimulateOptions};
pub use error::CliError;
pub use model::ModelFile;
