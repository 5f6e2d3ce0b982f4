//! File formats, experiment runner and CLI plumbing around `recast-core`.
//!
//! Run layout:
//!
//! ```text
//! <experiment>/summary.json            cross-run comparison, cost table
//! <experiment>/plots/cost_vs_g.dat
//! <experiment>/<run>/steps.csv         one row per training step
//! <experiment>/<run>/curves/<metric>.csv
//! <experiment>/<run>/summary.json
//! <experiment>/<run>/plots/*.dat
//! <experiment>/<run>/checkpoint.json
//! ```

pub mod error;
pub mod experiment;
pub mod formats;

pub use error::{LabError, Result};
pub use experiment::{run_experiment, run_training, ExperimentManifest, RunOutcome};
