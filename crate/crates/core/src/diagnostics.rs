//! Checkpoint measurements and run logs.
//!
//! The monitored matrix is `W_hh` for recurrent models and the first hidden
//! weight matrix for feedforward ones. Regime thresholds only label logs;
//! nothing here feeds back into training.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffnet::{FeedforwardGrads, FeedforwardParams};
use crate::matrix::Matrix;
use crate::ortho::{ortho_loss, PretrainReport};
use crate::spectral::spectral_norm_capped;
use crate::srnn::{RecurrentGrads, RecurrentParams};

/// Power-iteration budget per checkpoint.
pub const SNAPSHOT_POWER_ITERS: usize = 300;
pub const SNAPSHOT_POWER_TOL: f64 = 1e-12;

/// CSV header, in column order.
pub const CSV_COLUMNS: [&str; 8] = [
    "iteration",
    "samples_seen",
    "e_p",
    "rho",
    "grad_norm",
    "test_metric",
    "global_error",
    "layer_grad_norms",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: u64,
    pub samples_seen: u64,
    pub e_p: f64,
    pub rho: f64,
    /// Frobenius norm of the gradient of the monitored matrix.
    pub grad_norm: f64,
    /// Per-layer weight gradient norms, input side first. Empty for recurrent runs.
    pub layer_grad_norms: Vec<f64>,
    pub test_metric: f64,
    pub global_error: f64,
}

impl TrainRecord {
    pub fn is_finite(&self) -> bool {
        [self.e_p, self.rho, self.grad_norm, self.test_metric, self.global_error]
            .iter()
            .chain(&self.layer_grad_norms)
            .all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub test_metric: f64,
    pub global_error: f64,
}

/// Builds a record from an arbitrary monitored matrix and its gradient.
pub fn snapshot(
    iteration: u64,
    samples_seen: u64,
    monitored: &Matrix,
    monitored_grad: Option<&Matrix>,
    layer_grad_norms: Vec<f64>,
    eval: Measurement,
) -> TrainRecord {
    TrainRecord {
        iteration,
        samples_seen,
        e_p: ortho_loss(monitored),
        rho: spectral_norm_capped(monitored, SNAPSHOT_POWER_TOL, SNAPSHOT_POWER_ITERS),
        grad_norm: monitored_grad.map_or(0.0, Matrix::frobenius_norm),
        layer_grad_norms,
        test_metric: eval.test_metric,
        global_error: eval.global_error,
    }
}

pub fn snapshot_srnn(
    iteration: u64,
    samples_seen: u64,
    params: &RecurrentParams,
    grads: Option<&RecurrentGrads>,
    eval: Measurement,
) -> TrainRecord {
    snapshot(
        iteration,
        samples_seen,
        &params.w_hh,
        grads.map(|g| &g.w_hh),
        Vec::new(),
        eval,
    )
}

pub fn snapshot_ff(
    iteration: u64,
    samples_seen: u64,
    params: &FeedforwardParams,
    grads: Option<&FeedforwardGrads>,
    eval: Measurement,
) -> TrainRecord {
    let monitored = params.hidden_layers.first().unwrap_or(&params.output_layer);
    let monitored_grad = grads.map(|g| &g.hidden_layers.first().unwrap_or(&g.output_layer).weights);
    let norms = grads.map(FeedforwardGrads::weight_norms).unwrap_or_default();
    snapshot(iteration, samples_seen, &monitored.weights, monitored_grad, norms, eval)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Vanishing,
    Exploding,
    Stable,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Vanishing => "vanishing",
            Regime::Exploding => "exploding",
            Regime::Stable => "stable",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeThresholds {
    /// Median gradient norm below which the window counts as vanishing.
    pub vanishing_norm: f64,
    /// Median `rho` must exceed `1 + rho_margin` to count as exploding.
    pub rho_margin: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            vanishing_norm: 1e-8,
            rho_margin: 0.05,
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Labels a window of checkpoints. Vanishing wins over exploding; exploding
/// additionally needs the last gradient norm above the first.
///
/// Returns `None` for an empty window.
pub fn classify_regime(window: &[TrainRecord], th: &RegimeThresholds) -> Option<Regime> {
    let first = window.first()?;
    let last = window.last()?;
    let norm = median(window.iter().map(|r| r.grad_norm).collect());
    if norm < th.vanishing_norm {
        return Some(Regime::Vanishing);
    }
    let rho = median(window.iter().map(|r| r.rho).collect());
    if rho > 1.0 + th.rho_margin && last.grad_norm > first.grad_norm {
        return Some(Regime::Exploding);
    }
    Some(Regime::Stable)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub success: bool,
    /// Training iterations actually performed.
    pub iterations: u64,
    pub samples_seen: u64,
    /// First checkpoint at which the criterion held.
    pub solved_at: Option<u64>,
    pub final_metric: f64,
    pub final_error: f64,
    pub stop_reason: String,
    /// Reports from orthogonal pre-training, one per pre-trained matrix.
    #[serde(default)]
    pub pretraining: Vec<PretrainReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    /// Resolved configuration, including seeds and the task manifest.
    pub config: serde_json::Value,
    pub records: Vec<TrainRecord>,
    pub outcome: Option<RunOutcome>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    iteration: u64,
    samples_seen: u64,
    e_p: f64,
    rho: f64,
    grad_norm: f64,
    test_metric: f64,
    global_error: f64,
    layer_grad_norms: &'a str,
}

impl RunLog {
    pub fn new(config: serde_json::Value) -> Self {
        Self {
            config,
            records: Vec::new(),
            outcome: None,
        }
    }

    /// Appends a record, rejecting non-finite values and non-increasing iterations.
    pub fn push(&mut self, record: TrainRecord) -> Result<()> {
        if !record.is_finite() {
            return Err(Error::Value(format!(
                "non-finite record at iteration {}",
                record.iteration
            )));
        }
        if let Some(prev) = self.records.last() {
            if record.iteration <= prev.iteration {
                return Err(Error::Value(format!(
                    "iteration {} after {}",
                    record.iteration, prev.iteration
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn regime(&self, th: &RegimeThresholds) -> Option<Regime> {
        classify_regime(&self.records, th)
    }

    /// Writes the records as CSV in [`CSV_COLUMNS`] order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(CSV_COLUMNS).map_err(csv_err)?;
        for r in &self.records {
            let layers = r
                .layer_grad_norms
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(";");
            w.serialize(CsvRow {
                iteration: r.iteration,
                samples_seen: r.samples_seen,
                e_p: r.e_p,
                rho: r.rho,
                grad_norm: r.grad_norm,
                test_metric: r.test_metric,
                global_error: r.global_error,
                layer_grad_norms: &layers,
            })
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON lines: `{"config":..}`, one object per record, then `{"outcome":..}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &serde_json::json!({ "config": self.config }))?;
        out.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut out, &serde_json::json!({ "outcome": self.outcome }))?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head: serde_json::Value =
            serde_json::from_str(lines.next().ok_or_else(|| Error::Format("empty run log".into()))?)?;
        let config = head
            .get("config")
            .cloned()
            .ok_or_else(|| Error::Format("first line lacks config".into()))?;
        let mut log = RunLog::new(config);
        for line in lines {
            let v: serde_json::Value = serde_json::from_str(line)?;
            if let Some(o) = v.get("outcome") {
                log.outcome = serde_json::from_value(o.clone())?;
            } else {
                log.records.push(serde_json::from_value(v)?);
            }
        }
        Ok(log)
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(iteration: u64, rho: f64, grad_norm: f64) -> TrainRecord {
        TrainRecord {
            iteration,
            samples_seen: iteration * 20,
            e_p: 0.0,
            rho,
            grad_norm,
            layer_grad_norms: vec![],
            test_metric: 0.5,
            global_error: 1.0,
        }
    }

    fn eval() -> Measurement {
        Measurement {
            test_metric: 0.25,
            global_error: 2.0,
        }
    }

    #[test]
    fn orthogonal_monitor() {
        let theta: f64 = 0.3;
        let q = Matrix::from_rows(&[vec![theta.cos(), -theta.sin()], vec![theta.sin(), theta.cos()]]);
        let r = snapshot(0, 0, &q, None, vec![], eval());
        assert!(r.e_p < 1e-6);
        assert!((r.rho - 1.0).abs() < 1e-3);
        assert_eq!(r.grad_norm, 0.0);
        let r = snapshot(0, 0, &q.scaled(0.5), Some(&Matrix::zeros(2, 2)), vec![], eval());
        assert!((r.rho - 0.5).abs() < 1e-6);
        assert_eq!(r.grad_norm, 0.0);
    }

    #[test]
    fn regimes() {
        let th = RegimeThresholds::default();
        let zeros = vec![rec(0, 0.01, 0.0), rec(100, 0.01, 0.0)];
        assert_eq!(classify_regime(&zeros, &th), Some(Regime::Vanishing));
        let grow = vec![rec(0, 1.5, 1.0), rec(100, 1.8, 2.0), rec(200, 2.2, 4.0)];
        assert_eq!(classify_regime(&grow, &th), Some(Regime::Exploding));
        let flat = vec![rec(0, 1.0, 0.3), rec(100, 1.01, 0.2), rec(200, 0.99, 0.3)];
        assert_eq!(classify_regime(&flat, &th), Some(Regime::Stable));
        assert_eq!(classify_regime(&[], &th), None);
    }

    #[test]
    fn log_rejects_bad_records() {
        let mut log = RunLog::new(serde_json::json!({}));
        log.push(rec(0, 1.0, 1.0)).unwrap();
        assert!(log.push(rec(0, 1.0, 1.0)).is_err());
        assert!(log.push(rec(5, f64::NAN, 1.0)).is_err());
        log.push(rec(5, 1.0, 1.0)).unwrap();
    }

    #[test]
    fn csv_and_jsonl_round_trip() {
        let mut log = RunLog::new(serde_json::json!({"seed": 7}));
        log.push(rec(0, 1.0, 0.5)).unwrap();
        let mut r = rec(100, 0.9, 0.25);
        r.layer_grad_norms = vec![1.5, 0.125];
        log.push(r).unwrap();
        log.outcome = Some(RunOutcome {
            success: true,
            iterations: 100,
            samples_seen: 2000,
            solved_at: Some(100),
            final_metric: 1.0,
            final_error: 0.1,
            stop_reason: "solved".into(),
            pretraining: vec![],
        });

        let mut csv_bytes = Vec::new();
        log.write_csv(&mut csv_bytes).unwrap();
        let text = String::from_utf8(csv_bytes).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap(), "0,0,0.0,1.0,0.5,0.5,1.0,");
        assert_eq!(lines.next().unwrap(), "100,2000,0.0,0.9,0.25,0.5,1.0,1.5;0.125");

        let mut json = Vec::new();
        log.write_jsonl(&mut json).unwrap();
        let back = RunLog::read_jsonl(std::str::from_utf8(&json).unwrap()).unwrap();
        assert_eq!(back, log);
    }
}
