//! Configuration, replica orchestration and the named experiments that
//! connect the microscopic simulator to the macroscopic predictions.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod io;
pub mod manifest;
pub mod pool;
pub mod presets;
pub mod stats;

pub use commands::{execute, replay, Command};
pub use config::{Kind, Spec};
pub use manifest::{Report, RunManifest, Verdict};
