//! Experiment plumbing: rate fits, cross-model comparisons, configuration and reports.

mod config;
mod experiments;
mod fit;
mod run;
mod table;

pub use config::{ExperimentConfig, ExperimentKind, Numerics, Sweep};
pub use experiments::*;
pub use fit::{fit_log_rate, fit_rate, proportional_fit, ProportionalFit, RateFit};
pub use run::{run_config, run_experiment, RunOptions, RunOutcome, SCHEMA_VERSION};
pub use table::{Format, Table};
