//! Sequence-length escalation: train at `T`, and on success retrain a fresh
//! network at `T + step`, until the first failure.

use orthonet_core::diagnostics::RunLog;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::config::{ExperimentConfig, ModelKind};
use crate::error::{HarnessError, Result};
use crate::run::run_experiment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthPlan {
    pub t_start: usize,
    pub t_step: usize,
    /// Highest `T` attempted; escalation also stops here after a success.
    pub t_max: Option<usize>,
}

impl Default for DepthPlan {
    fn default() -> Self {
        Self {
            t_start: 10,
            t_step: 10,
            t_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthStep {
    pub seq_len: usize,
    pub success: bool,
    pub iterations: u64,
    pub solved_at: Option<u64>,
    pub final_metric: f64,
    pub stop_reason: String,
    #[serde(skip)]
    pub log: Option<RunLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthResult {
    pub regime: String,
    pub outcomes: Vec<DepthStep>,
    /// Largest `T` solved; 0 when the first length already fails.
    pub max_t_solved: usize,
    /// True when escalation stopped at `t_max` without a failure.
    pub hit_ceiling: bool,
}

/// Escalates with a caller-supplied runner, for tests and alternate backends.
pub fn depth_escalation_with<F>(base: &ExperimentConfig, plan: DepthPlan, mut run: F) -> Result<DepthResult>
where
    F: FnMut(&ExperimentConfig) -> Result<RunLog>,
{
    if base.model != ModelKind::Srnn || !base.task.kind.is_synthetic() {
        return Err(HarnessError::Config(
            "depth escalation needs a recurrent model on a synthetic task".into(),
        ));
    }
    if plan.t_step == 0 {
        return Err(HarnessError::Config("t_step must be positive".into()));
    }
    let mut outcomes = Vec::new();
    let mut max_t_solved = 0;
    let mut t = plan.t_start;
    let hit_ceiling = loop {
        if plan.t_max.is_some_and(|m| t > m) {
            break true;
        }
        let mut cfg = base.clone();
        cfg.task.seq_len = Some(t);
        let log = run(&cfg)?;
        let outcome = log
            .outcome
            .clone()
            .ok_or_else(|| HarnessError::Config("run finished without an outcome".into()))?;
        info!(t, success = outcome.success, "depth step");
        outcomes.push(DepthStep {
            seq_len: t,
            success: outcome.success,
            iterations: outcome.iterations,
            solved_at: outcome.solved_at,
            final_metric: outcome.final_metric,
            stop_reason: outcome.stop_reason,
            log: Some(log),
        });
        if !outcome.success {
            break false;
        }
        max_t_solved = t;
        t += plan.t_step;
    };
    Ok(DepthResult {
        regime: base.regime.name().into(),
        outcomes,
        max_t_solved,
        hit_ceiling,
    })
}

pub fn depth_escalation(base: &ExperimentConfig, plan: DepthPlan) -> Result<DepthResult> {
    depth_escalation_with(base, plan, run_experiment)
}
