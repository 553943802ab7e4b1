//! Experiment driver: JSON-configured training runs, pseudo-label theory
//! sweeps and seed-averaged ablations, written out as CSV and SVG.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod output;
pub mod svg;
pub mod theory;
pub mod train;

pub use error::{CliError, CliResult};
