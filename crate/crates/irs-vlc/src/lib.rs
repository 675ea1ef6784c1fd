//! Configuration files, CSV output and experiment drivers for the
//! `irs-vlc` command-line tool.
//!
//! The numerical work lives in [`irs_vlc_core`]; this crate adds file
//! formats, parallel execution and the three commands `optimize`, `sweep`
//! and `ber`.

pub mod config;
pub mod csvio;
pub mod error;
pub mod experiments;

pub use config::{ExperimentConfig, Scheme, SweepAxis};
pub use error::{CliError, Result};
pub use experiments::{run_ber, run_optimize, run_sweep, Context, RunSummary, SchemeOutcome};
