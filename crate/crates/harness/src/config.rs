//! Declarative experiment configuration (TOML) and its validation.

use std::path::{Path, PathBuf};

use orthonet_core::ortho::PretrainConfig;
use orthonet_core::tasks::{SuccessCriterion, TaskKind, TaskManifest};
use orthonet_core::InitScheme;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Srnn,
    Ff,
}

/// Training regime. Regime-specific knobs live inside their variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Regime {
    Vanilla {},
    Open {
        lambda: f64,
    },
    Oinit {
        #[serde(default = "default_alpha_p")]
        alpha_p: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default = "default_pretrain_steps")]
        max_steps: usize,
        /// Start from the raw sample, without pre-training.
        #[serde(default)]
        skip_pretraining: bool,
    },
    /// Penalty step on the recurrent matrix after global-norm clipping of the task gradient.
    OpenClip {
        lambda: f64,
        threshold: f64,
    },
}

fn default_alpha_p() -> f64 {
    0.1
}
fn default_epsilon() -> f64 {
    1e-6
}
fn default_pretrain_steps() -> usize {
    10_000
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Vanilla {} => "vanilla",
            Regime::Open { .. } => "open",
            Regime::Oinit { .. } => "oinit",
            Regime::OpenClip { .. } => "open_clip",
        }
    }

    pub fn oinit() -> Self {
        Regime::Oinit {
            alpha_p: default_alpha_p(),
            epsilon: default_epsilon(),
            max_steps: default_pretrain_steps(),
            skip_pretraining: false,
        }
    }

    pub fn lambda(&self) -> f64 {
        match *self {
            Regime::Open { lambda } | Regime::OpenClip { lambda, .. } => lambda,
            _ => 0.0,
        }
    }

    /// Pre-training settings, when this regime pre-trains.
    pub fn pretrain_config(&self) -> Option<PretrainConfig> {
        match *self {
            Regime::Oinit {
                alpha_p,
                epsilon,
                max_steps,
                skip_pretraining: false,
            } => Some(PretrainConfig {
                alpha_p,
                epsilon,
                max_steps,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Sequence length for synthetic tasks.
    #[serde(default)]
    pub seq_len: Option<usize>,
    /// Directory holding the IDX files for MNIST tasks.
    #[serde(default)]
    pub mnist_dir: Option<PathBuf>,
}

impl TaskSpec {
    pub fn seq_len(&self) -> usize {
        match self.kind {
            TaskKind::MnistSequence => 784,
            TaskKind::MnistFlat => 1,
            _ => self.seq_len.unwrap_or(self.kind.min_len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Hidden layer count for feedforward models.
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_init")]
    pub init: InitScheme,
}

fn default_hidden() -> usize {
    100
}
fn default_layers() -> usize {
    1
}
fn default_init() -> InitScheme {
    InitScheme::Normalized
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            layers: default_layers(),
            init: default_init(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub alpha: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Update budget. Ignored when `epochs` is set.
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    /// Budget in passes over the training set (MNIST only).
    #[serde(default)]
    pub epochs: Option<u64>,
    #[serde(default = "default_checkpoint")]
    pub checkpoint_every: u64,
    /// Size of the held-out set.
    #[serde(default = "default_test_samples")]
    pub test_samples: usize,
    /// Fixed subsample evaluated at intermediate checkpoints; the full set
    /// confirms success and scores the final checkpoint.
    #[serde(default)]
    pub checkpoint_test_samples: Option<usize>,
    #[serde(default = "default_true")]
    pub stop_on_success: bool,
    /// Overrides the task's default success rule.
    #[serde(default)]
    pub success: Option<SuccessCriterion>,
    /// Stops the run at the first checkpoint past this many seconds.
    #[serde(default)]
    pub wall_clock_secs: Option<f64>,
}

fn default_batch() -> usize {
    20
}
fn default_iterations() -> u64 {
    100_000
}
fn default_checkpoint() -> u64 {
    100
}
fn default_test_samples() -> usize {
    10_000
}
fn default_true() -> bool {
    true
}

impl TrainingSpec {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            batch_size: default_batch(),
            iterations: default_iterations(),
            epochs: None,
            checkpoint_every: default_checkpoint(),
            test_samples: default_test_samples(),
            checkpoint_test_samples: None,
            stop_on_success: true,
            success: None,
            wall_clock_secs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelKind,
    pub regime: Regime,
    pub task: TaskSpec,
    #[serde(default)]
    pub network: NetworkSpec,
    pub training: TrainingSpec,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn success_criterion(&self) -> SuccessCriterion {
        self.training
            .success
            .unwrap_or_else(|| SuccessCriterion::for_task(self.task.kind))
    }

    pub fn manifest(&self) -> TaskManifest {
        TaskManifest::new(self.task.kind, self.task.seq_len(), self.seed)
    }

    /// Layer widths for feedforward models, input first.
    pub fn ff_layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.task.kind.input_size()];
        sizes.extend(std::iter::repeat_n(self.network.hidden, self.network.layers));
        sizes.push(self.task.kind.output_size());
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        let t = &self.training;
        if !(t.alpha > 0.0 && t.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", t.alpha));
        }
        if t.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if t.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive".into());
        }
        if t.test_samples == 0 {
            return bad("test_samples must be positive".into());
        }
        if t.checkpoint_test_samples == Some(0) {
            return bad("checkpoint_test_samples must be positive".into());
        }
        if let Some(secs) = t.wall_clock_secs {
            if !(secs > 0.0) {
                return bad(format!("wall_clock_secs must be positive, got {secs}"));
            }
        }
        if let Some(s) = &t.success {
            s.validate()?;
        }
        if self.network.hidden == 0 || self.network.layers == 0 {
            return bad("network sizes must be positive".into());
        }
        self.network.init.validate()?;

        match self.regime {
            Regime::Vanilla {} => {}
            Regime::Open { lambda } => {
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return bad(format!("lambda must be non-negative, got {lambda}"));
                }
            }
            Regime::OpenClip { lambda, threshold } => {
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return bad(format!("lambda must be non-negative, got {lambda}"));
                }
                if !(threshold > 0.0) {
                    return bad(format!("clip threshold must be positive, got {threshold}"));
                }
                if self.model == ModelKind::Ff {
                    return bad("open_clip applies to recurrent models only".into());
                }
            }
            Regime::Oinit { .. } => {
                if let Some(p) = self.regime.pretrain_config() {
                    p.validate()?;
                }
            }
        }

        let kind = self.task.kind;
        match (self.model, kind) {
            (ModelKind::Ff, TaskKind::MnistFlat) => {}
            (ModelKind::Ff, _) => return bad(format!("feedforward model cannot run {kind}")),
            (ModelKind::Srnn, TaskKind::MnistFlat) => {
                return bad("recurrent model expects mnist_sequence, not mnist_flat".into())
            }
            (ModelKind::Srnn, _) => {}
        }
        if kind.is_synthetic() {
            let t = self.task.seq_len();
            if t < kind.min_len() {
                return bad(format!("{kind} needs T >= {}, got {t}", kind.min_len()));
            }
            if self.training.epochs.is_some() {
                return bad("epochs only apply to MNIST tasks".into());
            }
        } else if self.task.seq_len.is_some_and(|t| t != self.task.seq_len()) {
            return bad(format!("{kind} has a fixed sequence length"));
        }
        Ok(())
    }
}
