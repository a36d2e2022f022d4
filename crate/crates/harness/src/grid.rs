//! Exhaustive search over learning rate and penalty weight.

use orthonet_core::diagnostics::RunLog;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Regime};
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub alpha: f64,
    pub lambda: Option<f64>,
    pub final_metric: Option<f64>,
    pub success: bool,
    /// Set when the run itself errored or diverged.
    pub failure: Option<String>,
    #[serde(skip)]
    pub log: Option<RunLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    /// Index into `cells` of the best completed run.
    pub best: Option<usize>,
}

impl GridResult {
    pub fn best_cell(&self) -> Option<&GridCell> {
        self.best.map(|i| &self.cells[i])
    }
}

/// `regime` with its penalty weight replaced; non-penalised regimes become `open`.
pub fn with_lambda(regime: &Regime, lambda: f64) -> Regime {
    match *regime {
        Regime::OpenClip { threshold, .. } => Regime::OpenClip { lambda, threshold },
        _ => Regime::Open { lambda },
    }
}

/// Every cell reuses the base seed. The best cell has the highest final test
/// metric; ties go to the smaller `alpha`, then the smaller `lambda`.
/// Errored or diverged runs are recorded as failed cells and never win.
pub fn grid_search_with<F>(base: &ExperimentConfig, alphas: &[f64], lambdas: &[f64], run: F) -> Result<GridResult>
where
    F: Fn(&ExperimentConfig) -> Result<RunLog> + Sync,
{
    if alphas.is_empty() {
        return Err(HarnessError::Config("grid needs at least one alpha".into()));
    }
    let penalised = matches!(base.regime, Regime::Open { .. } | Regime::OpenClip { .. });
    if !lambdas.is_empty() && !penalised {
        return Err(HarnessError::Config(format!(
            "lambda grid given for the {} regime",
            base.regime.name()
        )));
    }
    let lambda_axis: Vec<Option<f64>> = if lambdas.is_empty() {
        vec![None]
    } else {
        lambdas.iter().copied().map(Some).collect()
    };
    let points: Vec<(f64, Option<f64>)> = alphas
        .iter()
        .flat_map(|&a| lambda_axis.iter().map(move |&l| (a, l)))
        .collect();

    let cells: Vec<GridCell> = points
        .par_iter()
        .map(|&(alpha, lambda)| {
            let mut cfg = base.clone();
            cfg.training.alpha = alpha;
            if let Some(l) = lambda {
                cfg.regime = with_lambda(&base.regime, l);
            }
            let result = cfg.validate().and_then(|_| run(&cfg));
            match result {
                Ok(log) => {
                    let o = log.outcome.clone();
                    let diverged = o.as_ref().is_none_or(|o| o.stop_reason == "diverged");
                    GridCell {
                        alpha,
                        lambda,
                        final_metric: o.as_ref().map(|o| o.final_metric),
                        success: o.as_ref().is_some_and(|o| o.success),
                        failure: diverged.then(|| "diverged".to_string()),
                        log: Some(log),
                    }
                }
                Err(e) => GridCell {
                    alpha,
                    lambda,
                    final_metric: None,
                    success: false,
                    failure: Some(e.to_string()),
                    log: None,
                },
            }
        })
        .collect();

    let best = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.failure.is_none())
        .filter_map(|(i, c)| c.final_metric.map(|m| (i, m, c)))
        .max_by(|(_, ma, a), (_, mb, b)| {
            ma.total_cmp(mb)
                .then(b.alpha.total_cmp(&a.alpha))
                .then(b.lambda.unwrap_or(0.0).total_cmp(&a.lambda.unwrap_or(0.0)))
        })
        .map(|(i, _, _)| i);
    Ok(GridResult { cells, best })
}

pub fn grid_search(base: &ExperimentConfig, alphas: &[f64], lambdas: &[f64]) -> Result<GridResult> {
    grid_search_with(base, alphas, lambdas, crate::run::run_experiment)
}
