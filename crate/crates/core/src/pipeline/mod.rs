//! Experiment orchestration: config, dataset files, and the CLI commands.

mod commands;
mod config;
mod container;
mod raster;

pub use commands::*;
pub use config::*;
pub use container::*;
pub use raster::{pgm_bytes, write_pgm};
