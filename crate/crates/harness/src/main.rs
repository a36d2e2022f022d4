use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use orthonet_core::init::InitScheme;
use orthonet_core::ortho::{convergence_experiment, PretrainConfig};
use orthonet_core::tasks::{SuccessCriterion, TaskKind};
use orthonet_harness::config::{ExperimentConfig, Regime};
use orthonet_harness::output::{write_json, write_run, write_table};
use orthonet_harness::run::{default_mnist_dir, MnistData};
use orthonet_harness::theory::verify_moments;
use orthonet_harness::{depth, grid, presets, run_experiment_with, DepthPlan};
use serde::Serialize;
use tracing::info;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "orthonet",
    version,
    about = "Orthogonality experiments for recurrent and deep feedforward networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Repeated orthogonal pre-training of random square matrices.
    Pretrain(PretrainArgs),
    /// Monte Carlo check of the loss moments at initialisation.
    VerifyTheory(TheoryArgs),
    /// One training run.
    Train(RunArgs),
    /// Sequence-length escalation on a synthetic task.
    Depth(DepthArgs),
    /// Exhaustive search over alpha (and lambda for penalised regimes).
    Grid(GridArgs),
    /// Pixel-by-pixel MNIST with a recurrent network.
    MnistSeq(MnistArgs),
    /// Flat MNIST with a deep feedforward network.
    MnistFf(MnistArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Gaussian,
    Uniform,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long, default_value_t = 100)]
    size: usize,
    #[arg(long, value_enum, default_value = "gaussian")]
    init: Dist,
    /// Standard deviation (gaussian) or bound (uniform).
    #[arg(long, default_value_t = 0.1)]
    scale: f64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha_p: f64,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    #[arg(long, default_value_t = 10_000)]
    max_steps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "runs/pretrain")]
    out: PathBuf,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![10usize, 50, 100])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0.1)]
    scale: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "runs/theory")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    Vanilla,
    Open,
    Oinit,
    OpenClip,
}

/// Config source plus per-field overrides.
#[derive(Args, Clone)]
struct Overrides {
    /// TOML experiment file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration, see `--list-presets`.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    list_presets: bool,
    #[arg(long, value_enum)]
    regime: Option<RegimeArg>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    clip_threshold: Option<f64>,
    #[arg(long)]
    alpha_p: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Start the oinit regime from the raw sample.
    #[arg(long)]
    skip_pretraining: bool,
    #[arg(long)]
    task: Option<TaskArg>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// Gaussian initialisation with this standard deviation.
    #[arg(long)]
    init_std: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    test_samples: Option<usize>,
    #[arg(long)]
    checkpoint_test_samples: Option<usize>,
    /// Accuracy needed to count a run as solved.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    no_early_stop: bool,
    #[arg(long)]
    wall_clock_secs: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for logs.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    TemporalOrder,
    #[value(name = "temporal-order-3bit")]
    TemporalOrder3bit,
    Adding,
    RandomPermutation,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::TemporalOrder => TaskKind::TemporalOrder,
            TaskArg::TemporalOrder3bit => TaskKind::TemporalOrder3Bit,
            TaskArg::Adding => TaskKind::Adding,
            TaskArg::RandomPermutation => TaskKind::RandomPermutation,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    cfg: Overrides,
}

#[derive(Args)]
struct DepthArgs {
    #[command(flatten)]
    cfg: Overrides,
    #[arg(long, default_value_t = 10)]
    t_start: usize,
    #[arg(long, default_value_t = 10)]
    t_step: usize,
    #[arg(long)]
    t_max: Option<usize>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    cfg: Overrides,
    #[arg(long, value_delimiter = ',', required = true)]
    alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    lambdas: Vec<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Desk,
    Full,
}

#[derive(Args)]
struct MnistArgs {
    #[command(flatten)]
    cfg: Overrides,
    /// Picks the matching preset when neither `--config` nor `--preset` is given.
    #[arg(long, value_enum, default_value = "desk")]
    scale: Scale,
}

impl Overrides {
    fn resolve(&self, fallback: Option<String>) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.preset.clone().or(fallback)) {
            (Some(p), _) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            (None, Some(name)) => presets::load(&name)?,
            (None, None) => bail!("pass --config FILE or --preset NAME"),
        };
        if let Some(r) = self.regime {
            cfg.regime = match r {
                RegimeArg::Vanilla => Regime::Vanilla {},
                RegimeArg::Open => Regime::Open {
                    lambda: self.lambda.unwrap_or(cfg.regime.lambda()),
                },
                RegimeArg::OpenClip => Regime::OpenClip {
                    lambda: self.lambda.unwrap_or(cfg.regime.lambda()),
                    threshold: self.clip_threshold.unwrap_or(1.0),
                },
                RegimeArg::Oinit => Regime::oinit(),
            };
        }
        match &mut cfg.regime {
            Regime::Open { lambda } => {
                if let Some(l) = self.lambda {
                    *lambda = l;
                }
            }
            Regime::OpenClip { lambda, threshold } => {
                if let Some(l) = self.lambda {
                    *lambda = l;
                }
                if let Some(t) = self.clip_threshold {
                    *threshold = t;
                }
            }
            Regime::Oinit {
                alpha_p,
                epsilon,
                skip_pretraining,
                ..
            } => {
                if let Some(a) = self.alpha_p {
                    *alpha_p = a;
                }
                if let Some(e) = self.epsilon {
                    *epsilon = e;
                }
                *skip_pretraining |= self.skip_pretraining;
            }
            Regime::Vanilla {} => {}
        }
        if let Some(t) = self.task {
            cfg.task.kind = t.into();
        }
        if self.seq_len.is_some() {
            cfg.task.seq_len = self.seq_len;
        }
        if self.mnist_dir.is_some() {
            cfg.task.mnist_dir = self.mnist_dir.clone();
        }
        if let Some(h) = self.hidden {
            cfg.network.hidden = h;
        }
        if let Some(l) = self.layers {
            cfg.network.layers = l;
        }
        if let Some(s) = self.init_std {
            cfg.network.init = InitScheme::gaussian(s);
        }
        let t = &mut cfg.training;
        if let Some(a) = self.alpha {
            t.alpha = a;
        }
        if let Some(b) = self.batch_size {
            t.batch_size = b;
        }
        if let Some(i) = self.iterations {
            t.iterations = i;
            t.epochs = None;
        }
        if self.epochs.is_some() {
            t.epochs = self.epochs;
        }
        if let Some(c) = self.checkpoint_every {
            t.checkpoint_every = c;
        }
        if let Some(n) = self.test_samples {
            t.test_samples = n;
        }
        if self.checkpoint_test_samples.is_some() {
            t.checkpoint_test_samples = self.checkpoint_test_samples;
        }
        if let Some(th) = self.threshold {
            t.success = Some(SuccessCriterion::Classification { threshold: th });
        }
        if self.no_early_stop {
            t.stop_on_success = false;
        }
        if self.wall_clock_secs.is_some() {
            t.wall_clock_secs = self.wall_clock_secs;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn stem(cfg: &ExperimentConfig) -> String {
    cfg.name
        .clone()
        .unwrap_or_else(|| format!("{}-{}", cfg.task.kind, cfg.regime.name()))
}

fn load_data(cfg: &ExperimentConfig) -> Result<Option<MnistData>> {
    if cfg.task.kind.is_synthetic() {
        return Ok(None);
    }
    let dir = cfg.task.mnist_dir.clone().unwrap_or_else(default_mnist_dir);
    let data = MnistData::load(&dir).with_context(|| format!("loading MNIST from {}", dir.display()))?;
    Ok(Some(data))
}

fn train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let data = load_data(cfg)?;
    let log = run_experiment_with(cfg, data.as_ref())?;
    let path = write_run(out, &stem(cfg), cfg, &log)?;
    if let Some(o) = &log.outcome {
        println!(
            "{} {}: success={} metric={:.4} iterations={} stop={} log={}",
            cfg.task.kind,
            cfg.regime.name(),
            o.success,
            o.final_metric,
            o.iterations,
            o.stop_reason,
            path.display()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct TrialRow {
    trial: usize,
    steps: usize,
}

fn pretrain(a: &PretrainArgs) -> Result<()> {
    let scheme = match a.init {
        Dist::Gaussian => InitScheme::gaussian(a.scale),
        Dist::Uniform => InitScheme::uniform(a.scale),
    };
    let cfg = PretrainConfig {
        alpha_p: a.alpha_p,
        epsilon: a.epsilon,
        max_steps: a.max_steps,
    };
    let summary = convergence_experiment(a.size, &scheme, &cfg, a.trials, a.seed)?;
    write_json(
        &a.out.join("summary.json"),
        &serde_json::json!({
            "size": a.size,
            "scheme": scheme,
            "config": cfg,
            "seed": a.seed,
            "trials": summary.trials,
            "successes": summary.successes,
            "success_rate": summary.success_rate(),
            "mean_steps": summary.mean_steps,
            "min_steps": summary.min_steps,
            "max_steps": summary.max_steps,
            "monotone": summary.monotone,
        }),
    )?;
    let rows: Vec<TrialRow> = summary
        .steps
        .iter()
        .enumerate()
        .map(|(trial, &steps)| TrialRow { trial, steps })
        .collect();
    write_table(&a.out.join("trials.csv"), &rows)?;
    println!(
        "{} trials: success rate {:.3}, mean steps {:.2} (min {}, max {})",
        summary.trials,
        summary.success_rate(),
        summary.mean_steps,
        summary.min_steps,
        summary.max_steps
    );
    Ok(())
}

fn verify_theory(a: &TheoryArgs) -> Result<()> {
    let schemes = [InitScheme::gaussian(a.scale), InitScheme::uniform(a.scale)];
    let checks = verify_moments(&schemes, &a.sizes, a.samples, a.seed)?;
    write_table(&a.out.join("moments.csv"), &checks)?;
    for c in &checks {
        println!(
            "{:<22} m={:<4} mean {:.6} vs {:.6} (se {:.2e}) {}  var {:.6} vs {:.6} ({:.1}%) {}",
            c.scheme,
            c.m,
            c.mc_mean,
            c.expected_mean,
            c.standard_error,
            if c.mean_ok { "ok" } else { "MISS" },
            c.mc_variance,
            c.expected_variance,
            100.0 * c.variance_rel_error(),
            if c.variance_ok { "ok" } else { "MISS" },
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct DepthRow {
    seq_len: usize,
    success: bool,
    iterations: u64,
    solved_at: Option<u64>,
    final_metric: f64,
    stop_reason: String,
}

fn run_depth(a: &DepthArgs) -> Result<()> {
    let base = a.cfg.resolve(None)?;
    let plan = DepthPlan {
        t_start: a.t_start,
        t_step: a.t_step,
        t_max: a.t_max,
    };
    let result = depth::depth_escalation(&base, plan)?;
    let dir = a.cfg.out.join(stem(&base));
    for step in &result.outcomes {
        if let Some(log) = &step.log {
            let mut cfg = base.clone();
            cfg.task.seq_len = Some(step.seq_len);
            write_run(&dir, &format!("t{:04}", step.seq_len), &cfg, log)?;
        }
    }
    let rows: Vec<DepthRow> = result
        .outcomes
        .iter()
        .map(|s| DepthRow {
            seq_len: s.seq_len,
            success: s.success,
            iterations: s.iterations,
            solved_at: s.solved_at,
            final_metric: s.final_metric,
            stop_reason: s.stop_reason.clone(),
        })
        .collect();
    write_table(&dir.join("depth.csv"), &rows)?;
    write_json(&dir.join("depth.json"), &result)?;
    println!(
        "{} {}: max T solved {}{}",
        base.task.kind,
        result.regime,
        result.max_t_solved,
        if result.hit_ceiling { " (ceiling)" } else { "" }
    );
    Ok(())
}

#[derive(Serialize)]
struct GridRow {
    alpha: f64,
    lambda: Option<f64>,
    final_metric: Option<f64>,
    success: bool,
    failure: Option<String>,
    best: bool,
}

fn run_grid(a: &GridArgs) -> Result<()> {
    let base = a.cfg.resolve(None)?;
    let data = load_data(&base)?;
    let result = grid::grid_search_with(&base, &a.alphas, &a.lambdas, |cfg| {
        run_experiment_with(cfg, data.as_ref())
    })?;
    let dir = a.cfg.out.join(format!("{}-grid", stem(&base)));
    let mut rows = Vec::new();
    for (i, cell) in result.cells.iter().enumerate() {
        if let Some(log) = &cell.log {
            let mut cfg = base.clone();
            cfg.training.alpha = cell.alpha;
            if let Some(l) = cell.lambda {
                cfg.regime = grid::with_lambda(&base.regime, l);
            }
            let name = match cell.lambda {
                Some(l) => format!("alpha{}_lambda{}", cell.alpha, l),
                None => format!("alpha{}", cell.alpha),
            };
            write_run(&dir, &name, &cfg, log)?;
        }
        rows.push(GridRow {
            alpha: cell.alpha,
            lambda: cell.lambda,
            final_metric: cell.final_metric,
            success: cell.success,
            failure: cell.failure.clone(),
            best: result.best == Some(i),
        });
    }
    write_table(&dir.join("grid.csv"), &rows)?;
    write_json(&dir.join("grid.json"), &result)?;
    match result.best_cell() {
        Some(b) => println!(
            "best: alpha={} lambda={:?} metric={:.4}",
            b.alpha,
            b.lambda,
            b.final_metric.unwrap_or(f64::NAN)
        ),
        None => println!("no cell completed"),
    }
    Ok(())
}

fn mnist_preset(kind: &str, a: &MnistArgs) -> String {
    let scale = match a.scale {
        Scale::Desk => "desk",
        Scale::Full => "full",
    };
    let regime = match a.cfg.regime {
        Some(RegimeArg::Open) | Some(RegimeArg::OpenClip) => "open",
        Some(RegimeArg::Oinit) => "oinit",
        _ => "vanilla",
    };
    format!("{scale}-mnist-{kind}-{regime}")
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    execute(&Cli::parse())?;
    info!("done");
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    let overrides = match &cli.command {
        Command::Train(a) => Some(&a.cfg),
        Command::Depth(a) => Some(&a.cfg),
        Command::Grid(a) => Some(&a.cfg),
        Command::MnistSeq(a) | Command::MnistFf(a) => Some(&a.cfg),
        _ => None,
    };
    if overrides.is_some_and(|o| o.list_presets) {
        for n in presets::names() {
            println!("{n}");
        }
        return Ok(());
    }
    match &cli.command {
        Command::Pretrain(a) => pretrain(a)?,
        Command::VerifyTheory(a) => verify_theory(a)?,
        Command::Train(a) => {
            let cfg = a.cfg.resolve(None)?;
            train(&cfg, &a.cfg.out)?;
        }
        Command::Depth(a) => run_depth(a)?,
        Command::Grid(a) => run_grid(a)?,
        Command::MnistSeq(a) => {
            let cfg = a.cfg.resolve(Some(mnist_preset("seq", a)))?;
            if cfg.task.kind != TaskKind::MnistSequence {
                bail!("mnist-seq needs an mnist_sequence config");
            }
            train(&cfg, &a.cfg.out)?;
        }
        Command::MnistFf(a) => {
            let cfg = a.cfg.resolve(Some(mnist_preset("ff", a)))?;
            if cfg.task.kind != TaskKind::MnistFlat {
                bail!("mnist-ff needs an mnist_flat config");
            }
            train(&cfg, &a.cfg.out)?;
        }
    }
    Ok(())
}
