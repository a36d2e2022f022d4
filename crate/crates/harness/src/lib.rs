//! Experiment orchestration: configuration, single runs, sequence-length
//! escalation, grid search and the closed-form moment checks.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod depth;
pub mod error;
pub mod grid;
pub mod output;
pub mod presets;
pub mod run;
pub mod theory;

pub use config::{ExperimentConfig, ModelKind, Regime};
pub use depth::{depth_escalation, DepthPlan, DepthResult};
pub use error::{HarnessError, Result};
pub use grid::{grid_search, GridResult};
pub use run::{run_experiment, run_experiment_with, MnistData, Network, Trainer};
