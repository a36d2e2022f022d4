//! Single-run training loop.

use std::path::PathBuf;
use std::time::Instant;

use orthonet_core::diagnostics::{snapshot_ff, snapshot_srnn, Measurement, RunLog, RunOutcome, TrainRecord};
use orthonet_core::ffnet::{
    ff_apply_update_in_place, ff_backprop, ff_predict, init_ff, FeedforwardGrads, FeedforwardParams,
};
use orthonet_core::mnist::{load_split, MnistSet, Split};
use orthonet_core::ortho::PretrainReport;
use orthonet_core::srnn::{
    apply_update_in_place, init_srnn, rnn_bptt, rnn_predict, RecurrentGrads, RecurrentParams, RecurrentSizes,
    UpdateRule,
};
use orthonet_core::tasks::{evaluate, generate, SuccessCriterion, TaskBatch, TaskKind};
use orthonet_core::{LossKind, Matrix, RngStream};
use tracing::{debug, info};

use crate::config::{ExperimentConfig, ModelKind, Regime};
use crate::error::{HarnessError, Result};

/// Rows per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 500;

/// `$MNIST_DIR`, else `data/mnist` under the workspace root.
pub fn default_mnist_dir() -> PathBuf {
    std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

#[derive(Debug, Clone)]
pub struct MnistData {
    pub train: MnistSet,
    pub test: MnistSet,
}

impl MnistData {
    pub fn load(dir: &std::path::Path) -> Result<Self> {
        Ok(Self {
            train: load_split(dir, Split::Train)?,
            test: load_split(dir, Split::Test)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Recurrent(RecurrentParams),
    Feedforward(FeedforwardParams),
}

#[derive(Debug, Clone)]
pub enum Gradients {
    Recurrent(RecurrentGrads),
    Feedforward(FeedforwardGrads),
}

impl Network {
    fn init(cfg: &ExperimentConfig, rng: &mut RngStream) -> Result<(Self, Vec<PretrainReport>)> {
        let oinit = cfg.regime.pretrain_config();
        let kind = cfg.task.kind;
        Ok(match cfg.model {
            ModelKind::Srnn => {
                let sizes = RecurrentSizes {
                    input: kind.input_size(),
                    hidden: cfg.network.hidden,
                    output: kind.output_size(),
                };
                let (p, report) = init_srnn(sizes, &cfg.network.init, oinit.as_ref(), rng)?;
                (Network::Recurrent(p), report.into_iter().collect())
            }
            ModelKind::Ff => {
                let (p, reports) = init_ff(&cfg.ff_layer_sizes(), &cfg.network.init, oinit.as_ref(), rng)?;
                (Network::Feedforward(p), reports)
            }
        })
    }

    fn gradients(&self, batch: &TaskBatch, loss: LossKind) -> Result<(f64, Gradients)> {
        Ok(match self {
            Network::Recurrent(p) => {
                let out = rnn_bptt(p, &batch.inputs, None, &batch.targets, loss)?;
                (out.loss, Gradients::Recurrent(out.grads))
            }
            Network::Feedforward(p) => {
                let (l, g) = ff_backprop(p, &batch.inputs[0], &batch.targets)?;
                (l, Gradients::Feedforward(g))
            }
        })
    }

    fn update(&mut self, grads: &Gradients, regime: &Regime, alpha: f64) -> Result<()> {
        match (self, grads) {
            (Network::Recurrent(p), Gradients::Recurrent(g)) => match *regime {
                Regime::OpenClip { lambda, threshold } => {
                    let norm = g.global_norm();
                    let rule = UpdateRule::Open { alpha, lambda };
                    if norm > threshold {
                        let mut clipped = g.clone();
                        clipped.scale(threshold / norm);
                        apply_update_in_place(p, &clipped, &rule)?;
                    } else {
                        apply_update_in_place(p, g, &rule)?;
                    }
                }
                Regime::Open { lambda } => apply_update_in_place(p, g, &UpdateRule::Open { alpha, lambda })?,
                Regime::Vanilla {} | Regime::Oinit { .. } => {
                    apply_update_in_place(p, g, &UpdateRule::Vanilla { alpha })?
                }
            },
            (Network::Feedforward(p), Gradients::Feedforward(g)) => {
                ff_apply_update_in_place(p, g, alpha, regime.lambda())?
            }
            _ => unreachable!("gradients always come from the same network"),
        }
        Ok(())
    }

    fn predict(&self, inputs: &[Matrix], loss: LossKind) -> Result<Matrix> {
        Ok(match self {
            Network::Recurrent(p) => rnn_predict(p, inputs, loss)?,
            Network::Feedforward(p) => ff_predict(p, &inputs[0])?,
        })
    }

    fn snapshot(&self, it: u64, seen: u64, grads: Option<&Gradients>, eval: Measurement) -> TrainRecord {
        match self {
            Network::Recurrent(p) => {
                let g = grads.and_then(|g| match g {
                    Gradients::Recurrent(g) => Some(g),
                    _ => None,
                });
                snapshot_srnn(it, seen, p, g, eval)
            }
            Network::Feedforward(p) => {
                let g = grads.and_then(|g| match g {
                    Gradients::Feedforward(g) => Some(g),
                    _ => None,
                });
                snapshot_ff(it, seen, p, g, eval)
            }
        }
    }
}

enum Source<'a> {
    Synthetic {
        kind: TaskKind,
        seq_len: usize,
        rng: RngStream,
    },
    Mnist {
        set: &'a MnistSet,
        flat: bool,
        order: Vec<usize>,
        pos: usize,
        rng: RngStream,
    },
}

fn mnist_batch(set: &MnistSet, flat: bool, idx: &[usize]) -> Result<TaskBatch> {
    Ok(if flat {
        set.as_flat_vectors(idx)?
    } else {
        set.as_pixel_sequences(idx)?
    })
}

impl Source<'_> {
    fn next_batch(&mut self, n: usize) -> Result<TaskBatch> {
        match self {
            Source::Synthetic { kind, seq_len, rng } => Ok(generate(*kind, *seq_len, n, rng)?),
            Source::Mnist {
                set,
                flat,
                order,
                pos,
                rng,
            } => {
                // reshuffle once the remaining tail cannot fill a batch
                if *pos + n > order.len() {
                    rng.shuffle(order);
                    *pos = 0;
                }
                let idx = &order[*pos..*pos + n];
                *pos += n;
                mnist_batch(set, *flat, idx)
            }
        }
    }
}

enum Holdout<'a> {
    Synthetic(Vec<TaskBatch>),
    Mnist {
        set: &'a MnistSet,
        flat: bool,
        indices: Vec<usize>,
    },
}

impl Holdout<'_> {
    fn outputs(&self, net: &Network, loss: LossKind) -> Result<(Matrix, Matrix)> {
        let mut outs = Vec::new();
        let mut targets = Vec::new();
        match self {
            Holdout::Synthetic(chunks) => {
                for c in chunks {
                    outs.push(net.predict(&c.inputs, loss)?);
                    targets.push(c.targets.clone());
                }
            }
            Holdout::Mnist { set, flat, indices } => {
                for idx in indices.chunks(EVAL_CHUNK) {
                    let b = mnist_batch(set, *flat, idx)?;
                    outs.push(net.predict(&b.inputs, loss)?);
                    targets.push(b.targets);
                }
            }
        }
        let o: Vec<&Matrix> = outs.iter().collect();
        let t: Vec<&Matrix> = targets.iter().collect();
        Ok((Matrix::vstack(&o)?, Matrix::vstack(&t)?))
    }

    fn measure(&self, net: &Network, loss: LossKind, criterion: &SuccessCriterion) -> Result<(Measurement, bool)> {
        let (out, target) = self.outputs(net, loss)?;
        let eval = evaluate(&out, &target, criterion)?;
        let (global_error, _) = loss.loss_and_grad(&out, &target)?;
        Ok((
            Measurement {
                test_metric: eval.value,
                global_error,
            },
            eval.success,
        ))
    }
}

fn synthetic_holdout(kind: TaskKind, seq_len: usize, n: usize, rng: &mut RngStream) -> Result<Vec<TaskBatch>> {
    let mut chunks = Vec::new();
    let mut left = n;
    while left > 0 {
        let size = left.min(EVAL_CHUNK);
        chunks.push(generate(kind, seq_len, size, rng)?);
        left -= size;
    }
    Ok(chunks)
}

/// A configured run: network, data streams and held-out sets.
///
/// Streams derived from the config seed: 0 initialises weights, 1 draws
/// training batches, 2 draws the synthetic test set, 3 picks the checkpoint
/// subsample.
pub struct Trainer<'a> {
    cfg: ExperimentConfig,
    net: Network,
    pretraining: Vec<PretrainReport>,
    source: Source<'a>,
    full: Holdout<'a>,
    /// Cheaper held-out subset for intermediate checkpoints.
    partial: Option<Holdout<'a>>,
    loss: LossKind,
    criterion: SuccessCriterion,
    iteration: u64,
    samples_seen: u64,
    budget: u64,
}

impl<'a> Trainer<'a> {
    /// `data` is required for MNIST tasks.
    pub fn new(cfg: &ExperimentConfig, data: Option<&'a MnistData>) -> Result<Self> {
        cfg.validate()?;
        let root = RngStream::new(cfg.seed);
        let mut init_rng = root.derive(0);
        let train_rng = root.derive(1);
        let mut test_rng = root.derive(2);
        let mut sub_rng = root.derive(3);
        let kind = cfg.task.kind;
        let t = &cfg.training;
        let (net, pretraining) = Network::init(cfg, &mut init_rng)?;

        let (source, full, partial, budget) = if kind.is_synthetic() {
            let seq_len = cfg.task.seq_len();
            let chunks = synthetic_holdout(kind, seq_len, t.test_samples, &mut test_rng)?;
            let partial = match t.checkpoint_test_samples {
                Some(n) if n < t.test_samples => {
                    let mut taken = 0;
                    let head: Vec<TaskBatch> = chunks
                        .iter()
                        .take_while(|c| {
                            let keep = taken < n;
                            taken += c.batch_size();
                            keep
                        })
                        .cloned()
                        .collect();
                    Some(Holdout::Synthetic(head))
                }
                _ => None,
            };
            let source = Source::Synthetic {
                kind,
                seq_len,
                rng: train_rng,
            };
            (source, Holdout::Synthetic(chunks), partial, t.iterations)
        } else {
            let data = data.ok_or_else(|| HarnessError::Config(format!("{kind} needs MNIST data")))?;
            let flat = kind == TaskKind::MnistFlat;
            let n_test = t.test_samples.min(data.test.len());
            let indices: Vec<usize> = (0..n_test).collect();
            let partial = match t.checkpoint_test_samples {
                Some(n) if n < n_test => {
                    let mut pick = indices.clone();
                    sub_rng.shuffle(&mut pick);
                    pick.truncate(n);
                    pick.sort_unstable();
                    Some(Holdout::Mnist {
                        set: &data.test,
                        flat,
                        indices: pick,
                    })
                }
                _ => None,
            };
            if data.train.len() < t.batch_size {
                return Err(HarnessError::Config(format!(
                    "batch of {} from {} training images",
                    t.batch_size,
                    data.train.len()
                )));
            }
            let per_epoch = (data.train.len() / t.batch_size) as u64;
            let budget = t.epochs.map_or(t.iterations, |e| e * per_epoch);
            let source = Source::Mnist {
                set: &data.train,
                flat,
                order: (0..data.train.len()).collect(),
                // forces a shuffle before the first batch
                pos: data.train.len(),
                rng: train_rng,
            };
            (
                source,
                Holdout::Mnist {
                    set: &data.test,
                    flat,
                    indices,
                },
                partial,
                budget,
            )
        };

        Ok(Self {
            cfg: cfg.clone(),
            net,
            pretraining,
            source,
            full,
            partial,
            loss: if kind.is_regression() {
                LossKind::Mse
            } else {
                LossKind::CrossEntropy
            },
            criterion: cfg.success_criterion(),
            iteration: 0,
            samples_seen: 0,
            budget,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Total update budget after resolving epochs.
    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn pretraining(&self) -> &[PretrainReport] {
        &self.pretraining
    }

    /// Draws a batch and computes its loss and gradients at the current parameters.
    fn forward_backward(&mut self) -> Result<(f64, Gradients)> {
        let batch = self.source.next_batch(self.cfg.training.batch_size)?;
        self.net.gradients(&batch, self.loss)
    }

    fn apply(&mut self, grads: &Gradients) -> Result<()> {
        self.net.update(grads, &self.cfg.regime, self.cfg.training.alpha)?;
        self.iteration += 1;
        self.samples_seen += self.cfg.training.batch_size as u64;
        Ok(())
    }

    /// One training update; returns the batch loss before the update.
    pub fn step(&mut self) -> Result<f64> {
        let (loss, grads) = self.forward_backward()?;
        self.apply(&grads)?;
        Ok(loss)
    }

    fn config_snapshot(&self) -> Result<serde_json::Value> {
        Ok(serde_json::json!({
            "experiment": serde_json::to_value(&self.cfg)?,
            "task_manifest": serde_json::to_value(self.cfg.manifest())?,
            "budget": self.budget,
        }))
    }

    /// Trains to the budget, stopping early on success (when configured), on
    /// divergence or past the wall-clock cap.
    ///
    /// A checkpoint at iteration `i` describes the parameters after `i`
    /// updates together with the gradient of the batch about to be applied.
    pub fn run(mut self) -> Result<RunLog> {
        let started = Instant::now();
        let mut log = RunLog::new(self.config_snapshot()?);
        let every = self.cfg.training.checkpoint_every;
        let stop_on_success = self.cfg.training.stop_on_success;
        let wall = self.cfg.training.wall_clock_secs;
        let mut solved_at = None;
        let stop_reason;

        loop {
            let it = self.iteration;
            let (loss, grads) = self.forward_backward()?;
            if !loss.is_finite() {
                stop_reason = "diverged";
                break;
            }
            let is_final = it == self.budget;
            if is_final || it.is_multiple_of(every) {
                let over_time = wall.is_some_and(|w| started.elapsed().as_secs_f64() >= w);
                let use_partial = !(is_final || over_time) && self.partial.is_some();
                let set = if use_partial {
                    self.partial.as_ref().expect("checked")
                } else {
                    &self.full
                };
                let (mut eval, mut ok) = set.measure(&self.net, self.loss, &self.criterion)?;
                if ok && use_partial {
                    (eval, ok) = self.full.measure(&self.net, self.loss, &self.criterion)?;
                }
                let record = self.net.snapshot(it, self.samples_seen, Some(&grads), eval);
                if !record.is_finite() {
                    stop_reason = "diverged";
                    break;
                }
                debug!(
                    iteration = it,
                    metric = record.test_metric,
                    e_p = record.e_p,
                    rho = record.rho,
                    "checkpoint"
                );
                log.push(record)?;
                if ok && solved_at.is_none() {
                    solved_at = Some(it);
                    if stop_on_success {
                        stop_reason = "solved";
                        break;
                    }
                }
                if is_final {
                    stop_reason = "budget";
                    break;
                }
                if over_time {
                    stop_reason = "wall_clock";
                    break;
                }
            }
            self.apply(&grads)?;
        }

        let last = log.records.last();
        let outcome = RunOutcome {
            success: solved_at.is_some(),
            iterations: self.iteration,
            samples_seen: self.samples_seen,
            solved_at,
            final_metric: last.map_or(0.0, |r| r.test_metric),
            final_error: last.map_or(f64::NAN, |r| r.global_error),
            stop_reason: stop_reason.into(),
            pretraining: self.pretraining.clone(),
        };
        info!(
            task = %self.cfg.task.kind,
            regime = self.cfg.regime.name(),
            seq_len = self.cfg.task.seq_len(),
            iterations = outcome.iterations,
            success = outcome.success,
            metric = outcome.final_metric,
            reason = %outcome.stop_reason,
            "run finished"
        );
        log.outcome = Some(outcome);
        Ok(log)
    }
}

/// Runs one experiment, loading MNIST from the configured directory when the
/// task needs it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunLog> {
    if cfg.task.kind.is_synthetic() {
        return Trainer::new(cfg, None)?.run();
    }
    let dir = cfg.task.mnist_dir.clone().unwrap_or_else(default_mnist_dir);
    let data = MnistData::load(&dir)?;
    Trainer::new(cfg, Some(&data))?.run()
}

/// As [`run_experiment`] with preloaded data.
pub fn run_experiment_with(cfg: &ExperimentConfig, data: Option<&MnistData>) -> Result<RunLog> {
    Trainer::new(cfg, data)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::output::write_run;

    fn small(regime: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            r#"
            model = "srnn"
            seed = 5
            [regime]
            {regime}
            [task]
            kind = "temporal_order"
            seq_len = 12
            [network]
            hidden = 16
            [training]
            alpha = 0.01
            batch_size = 8
            iterations = 300
            checkpoint_every = 50
            test_samples = 200
            stop_on_success = false
        "#
        ))
        .unwrap()
    }

    fn lockstep(a: &ExperimentConfig, b: &ExperimentConfig, steps: usize) {
        let mut x = Trainer::new(a, None).unwrap();
        let mut y = Trainer::new(b, None).unwrap();
        assert_eq!(x.network(), y.network());
        for i in 0..steps {
            let lx = x.step().unwrap();
            let ly = y.step().unwrap();
            assert_eq!(lx.to_bits(), ly.to_bits(), "loss differs at step {i}");
            assert_eq!(x.network(), y.network(), "parameters differ after step {i}");
        }
    }

    #[test]
    fn zero_penalty_is_vanilla() {
        lockstep(
            &small("kind = \"vanilla\""),
            &small("kind = \"open\"\nlambda = 0.0"),
            1000,
        );
    }

    #[test]
    fn unpretrained_oinit_is_vanilla() {
        lockstep(
            &small("kind = \"vanilla\""),
            &small("kind = \"oinit\"\nskip_pretraining = true"),
            1000,
        );
    }

    #[test]
    fn pretraining_changes_the_start() {
        let a = Trainer::new(&small("kind = \"vanilla\""), None).unwrap();
        let b = Trainer::new(&small("kind = \"oinit\""), None).unwrap();
        assert_ne!(a.network(), b.network());
        assert_eq!(b.pretraining().len(), 1);
        assert!(b.pretraining()[0].converged);
    }

    #[test]
    fn logs_are_byte_identical_across_runs() {
        let cfg = small("kind = \"open\"\nlambda = 0.1");
        let dir = tempfile::tempdir().unwrap();
        let read = |stem: &str| {
            let log = run_experiment(&cfg).unwrap();
            write_run(dir.path(), stem, &cfg, &log).unwrap();
            (
                std::fs::read(dir.path().join(format!("{stem}.csv"))).unwrap(),
                std::fs::read(dir.path().join(format!("{stem}.jsonl"))).unwrap(),
            )
        };
        let first = read("a");
        assert_eq!(first, read("b"));
        let text = String::from_utf8(first.0).unwrap();
        assert!(
            text.starts_with("iteration,samples_seen,e_p,rho,grad_norm,test_metric,global_error,layer_grad_norms\n")
        );
        assert_eq!(text.lines().count(), 1 + 7);
    }

    #[test]
    fn zero_budget_logs_the_initial_state_only() {
        let mut cfg = small("kind = \"vanilla\"");
        cfg.training.iterations = 0;
        let log = run_experiment(&cfg).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.records[0].iteration, 0);
        let outcome = log.outcome.unwrap();
        assert_eq!(outcome.iterations, 0);
        assert_eq!(outcome.stop_reason, "budget");
    }

    #[test]
    fn early_stop_on_easy_task() {
        let mut cfg = small("kind = \"vanilla\"");
        cfg.task.seq_len = Some(10);
        cfg.network.hidden = 30;
        cfg.training.iterations = 20_000;
        cfg.training.batch_size = 20;
        cfg.training.alpha = 0.05;
        cfg.training.stop_on_success = true;
        let log = run_experiment(&cfg).unwrap();
        let o = log.outcome.unwrap();
        assert!(o.success, "{o:?}");
        assert_eq!(o.stop_reason, "solved");
        assert_eq!(o.solved_at, Some(o.iterations));
    }
}
