//! Config-driven experiment runner.
//!
//! A config names a task stream, a list of methods and the hyperparameter
//! grids. [`run::execute`] trains every (method, lr, strength, seed)
//! combination on a worker pool and writes a run directory:
//!
//! - `results.csv`: one row per (method, grid point, seed, stage) with APA,
//!   ACF, both PS ledgers, μ, the retained snapshot count and the raw
//!   accuracy row
//! - `weights.csv`: ψ, η, v and μ of every past task at every stage
//! - `convergence.csv`: per-epoch objective, cross-entropy and penalty
//! - `stages.csv`: penalty operation counters and memory per stage
//! - `manifest.json`: the resolved config plus artifact and platform
//!   fingerprints; it can be passed back to `run`
//!
//! Rows are ordered by method label, lr, strength, seed and stage regardless
//! of worker count.

pub mod check;
pub mod config;
pub mod output;
pub mod report;
pub mod run;

pub use check::{run_checks, CheckReport};
pub use config::{ExperimentConfig, MethodSpec, MethodTag, RunSpec, DATA_DIR_ENV};
pub use report::{grid_select, read_results, report, Report, ResultRow, Selection};
pub use run::{execute, load_run_input, prepare, Manifest, RunOptions, RunSummary};
