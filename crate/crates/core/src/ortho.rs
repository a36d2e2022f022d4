//! Orthogonalisation loss, its gradient, layer-wise pre-training, the
//! orthogonality penalty, and the moment formulas describing the loss of a
//! random square matrix.
//!
//! The loss of a `rows x cols` matrix `W` is `‖G‖²_F` where the Gram residual
//! `G` is `WWᵀ - I` when `rows <= cols` (orthonormal rows) and `WᵀW - I`
//! otherwise (orthonormal columns), so that zero loss is always reachable.
//! Its gradient is `4 G W` in the first case and `4 W G` in the second.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::InitScheme;
use crate::matrix::{frobenius_norm_sq, gemm, product, Matrix, Op};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GramSide {
    Rows,
    Cols,
}

fn gram_side(w: &Matrix) -> GramSide {
    if w.rows() <= w.cols() {
        GramSide::Rows
    } else {
        GramSide::Cols
    }
}

fn gram_residual(w: &Matrix) -> (Matrix, GramSide) {
    let side = gram_side(w);
    let mut g = match side {
        GramSide::Rows => product(w, Op::N, w, Op::T),
        GramSide::Cols => product(w, Op::T, w, Op::N),
    }
    .expect("gram product of a matrix with itself");
    for i in 0..g.rows() {
        g[(i, i)] -= 1.0;
    }
    (g, side)
}

/// `out = beta * out + scale * grad`, where `grad = 4 G W` (or `4 W G`).
fn accumulate_grad(w: &Matrix, g: &Matrix, side: GramSide, scale: f64, beta: f64, out: &mut Matrix) {
    match side {
        GramSide::Rows => gemm(4.0 * scale, g, Op::N, w, Op::N, beta, out),
        GramSide::Cols => gemm(4.0 * scale, w, Op::N, g, Op::N, beta, out),
    }
    .expect("gradient shapes follow from w");
}

/// Orthogonalisation error `E^p` of `w`.
pub fn ortho_loss(w: &Matrix) -> f64 {
    frobenius_norm_sq(&gram_residual(w).0)
}

/// Gradient of [`ortho_loss`].
pub fn ortho_grad(w: &Matrix) -> Matrix {
    let (g, side) = gram_residual(w);
    let mut out = Matrix::zeros(w.rows(), w.cols());
    accumulate_grad(w, &g, side, 1.0, 0.0, &mut out);
    out
}

/// `lambda * ortho_grad(w)`; the update-rule form of the orthogonality penalty.
pub fn penalty_gradient(w: &Matrix, lambda: f64) -> Result<Matrix> {
    if !(lambda >= 0.0) {
        return Err(Error::param(format!("penalty weight must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(Matrix::zeros(w.rows(), w.cols()));
    }
    let mut g = ortho_grad(w);
    g.scale_in_place(lambda);
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub alpha_p: f64,
    pub epsilon: f64,
    pub max_steps: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            alpha_p: 0.1,
            epsilon: 1e-6,
            max_steps: 10_000,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_p > 0.0) || !(self.epsilon > 0.0) || self.max_steps == 0 {
            return Err(Error::param(format!(
                "pre-training needs alpha_p > 0, epsilon > 0, max_steps >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Number of gradient updates applied.
    pub steps_taken: usize,
    pub final_loss: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub weights: Matrix,
    pub report: PretrainReport,
    /// `E^p` before each update plus the final value, when requested.
    pub trace: Option<Vec<f64>>,
}

/// Full-batch gradient descent on `E^p` until it drops below `epsilon`.
///
/// The loss is checked before every update. Running out of steps, or the
/// loss becoming non-finite, yields a report with `converged == false`.
pub fn pretrain(w: Matrix, cfg: &PretrainConfig, record_trace: bool) -> Result<Pretrained> {
    cfg.validate()?;
    let mut w = w;
    let mut trace = record_trace.then(Vec::new);
    let mut grad = Matrix::zeros(w.rows(), w.cols());
    let mut steps = 0;
    loop {
        let (g, side) = gram_residual(&w);
        let loss = frobenius_norm_sq(&g);
        if let Some(t) = trace.as_mut() {
            t.push(loss);
        }
        let converged = loss < cfg.epsilon;
        if converged || steps >= cfg.max_steps || !loss.is_finite() {
            return Ok(Pretrained {
                weights: w,
                report: PretrainReport {
                    steps_taken: steps,
                    final_loss: loss,
                    converged,
                },
                trace,
            });
        }
        accumulate_grad(&w, &g, side, 1.0, 0.0, &mut grad);
        w.axpy(-cfg.alpha_p, &grad).expect("same shape");
        steps += 1;
    }
}

/// `E[f(X)] = m²(σ² + μ²) - 2mμ + m` for an `m x m` matrix of i.i.d. entries.
pub fn expected_loss(m: usize, mu: f64, sigma: f64) -> f64 {
    let m = m as f64;
    m * m * (sigma * sigma + mu * mu) - 2.0 * m * mu + m
}

/// `Var(f(X)) = 2m²σ⁴ + 2mσ²` for zero-mean Gaussian entries.
pub fn variance_loss_gaussian(m: usize, sigma: f64) -> f64 {
    let m = m as f64;
    let s2 = sigma * sigma;
    2.0 * m * m * s2 * s2 + 2.0 * m * s2
}

/// `Var(f(X)) = m²(22/45)b⁴ + m(2/3)b²` for `U(-b, b)` entries.
pub fn variance_loss_uniform(m: usize, b: f64) -> f64 {
    let m = m as f64;
    let b2 = b * b;
    m * m * (22.0 / 45.0) * b2 * b2 + m * (2.0 / 3.0) * b2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossMoments {
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
}

impl LossMoments {
    pub fn from_samples(xs: &[f64]) -> LossMoments {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let variance = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        LossMoments { mean, variance }
    }

    /// Standard error of the mean for `n` samples.
    pub fn standard_error(&self, n: usize) -> f64 {
        (self.variance / n as f64).sqrt()
    }
}

/// Sample mean and variance of `ortho_loss` over `trials` fresh `m x m`
/// matrices drawn from `scheme`.
///
/// Trial `k` draws from a child stream derived from one value taken from
/// `rng`, so the result does not depend on how trials are scheduled across
/// threads. Zero-spread schemes are accepted here (they give `f = m` exactly).
pub fn monte_carlo_loss_stats(
    m: usize,
    scheme: &InitScheme,
    trials: usize,
    rng: &mut RngStream,
) -> Result<LossMoments> {
    if trials < 2 {
        return Err(Error::param("need at least two trials"));
    }
    if m == 0 {
        return Err(Error::param("matrix size must be positive"));
    }
    let base = RngStream::new(rng.next_u64());
    let losses: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut r = base.derive(k as u64);
            ortho_loss(&scheme.fill(m, m, &mut r))
        })
        .collect();
    Ok(LossMoments::from_samples(&losses))
}

/// Outcome of repeating the pre-training experiment on many sampled matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub trials: usize,
    pub successes: usize,
    pub mean_steps: f64,
    pub min_steps: usize,
    pub max_steps: usize,
    /// Per-trial step counts, in trial order.
    pub steps: Vec<usize>,
    /// Trials whose loss trace decreased strictly at every step.
    pub monotone: usize,
}

impl ConvergenceSummary {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

/// Pre-trains `trials` independently sampled `m x m` matrices.
/// Trial `k` samples from `RngStream::new(seed).derive(k)`.
pub fn convergence_experiment(
    m: usize,
    scheme: &InitScheme,
    cfg: &PretrainConfig,
    trials: usize,
    seed: u64,
) -> Result<ConvergenceSummary> {
    scheme.validate()?;
    cfg.validate()?;
    if trials == 0 {
        return Err(Error::param("need at least one trial"));
    }
    let base = RngStream::new(seed);
    let outcomes: Vec<(PretrainReport, bool)> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut r = base.derive(k as u64);
            let w = scheme.fill(m, m, &mut r);
            let run = pretrain(w, cfg, true).expect("config validated above");
            let trace = run.trace.unwrap_or_default();
            let monotone = trace.windows(2).all(|p| p[1] < p[0]);
            (run.report, monotone)
        })
        .collect();
    let steps: Vec<usize> = outcomes.iter().map(|(r, _)| r.steps_taken).collect();
    let successes = outcomes.iter().filter(|(r, _)| r.converged).count();
    let conv_steps: Vec<usize> = outcomes
        .iter()
        .filter(|(r, _)| r.converged)
        .map(|(r, _)| r.steps_taken)
        .collect();
    let mean_steps = if conv_steps.is_empty() {
        f64::NAN
    } else {
        conv_steps.iter().sum::<usize>() as f64 / conv_steps.len() as f64
    };
    Ok(ConvergenceSummary {
        trials,
        successes,
        mean_steps,
        min_steps: steps.iter().copied().min().unwrap_or(0),
        max_steps: steps.iter().copied().max().unwrap_or(0),
        monotone: outcomes.iter().filter(|(_, m)| *m).count(),
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::sample;

    #[test]
    fn loss_examples() {
        assert_eq!(ortho_loss(&Matrix::identity(5)), 0.0);
        assert_eq!(ortho_loss(&Matrix::identity(2).scaled(2.0)), 18.0);
        assert_eq!(ortho_loss(&Matrix::from_rows(&[[2.0]])), 9.0);
    }

    #[test]
    fn grad_examples() {
        assert!(ortho_grad(&Matrix::identity(4)).data().iter().all(|&x| x == 0.0));
        assert_eq!(ortho_grad(&Matrix::from_rows(&[[2.0]]))[(0, 0)], 24.0);
    }

    #[test]
    fn penalty_examples() {
        let w = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert!(penalty_gradient(&w, 0.0).unwrap().data().iter().all(|&x| x == 0.0));
        assert!(penalty_gradient(&Matrix::identity(3), 1.0)
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 0.0));
        let p = penalty_gradient(&Matrix::from_rows(&[[2.0]]), 0.5).unwrap();
        assert_eq!(p[(0, 0)], 12.0);
        assert!(matches!(penalty_gradient(&w, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn penalty_is_scaled_gradient() {
        let w = sample(&InitScheme::gaussian(0.3), 6, 4, &mut RngStream::new(2)).unwrap();
        let lambda = 0.37;
        let p = penalty_gradient(&w, lambda).unwrap();
        let g = ortho_grad(&w);
        for (a, b) in p.data().iter().zip(g.data()) {
            assert_eq!(a.to_bits(), (b * lambda).to_bits());
        }
    }

    #[test]
    fn rectangular_targets_reachable_side() {
        // tall matrix with orthonormal columns: zero loss
        let tall = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]);
        assert_eq!(ortho_loss(&tall), 0.0);
        assert_eq!(ortho_loss(&tall.transpose()), 0.0);
    }

    #[test]
    fn pretrain_identity_takes_no_steps() {
        let out = pretrain(Matrix::identity(10), &PretrainConfig::default(), true).unwrap();
        assert_eq!(out.report.steps_taken, 0);
        assert_eq!(out.report.final_loss, 0.0);
        assert!(out.report.converged);
        assert_eq!(out.trace.unwrap(), vec![0.0]);
    }

    #[test]
    fn pretrain_budget_exhaustion_is_not_an_error() {
        let w = sample(&InitScheme::gaussian(0.1), 20, 20, &mut RngStream::new(1)).unwrap();
        let cfg = PretrainConfig {
            max_steps: 2,
            ..PretrainConfig::default()
        };
        let out = pretrain(w, &cfg, false).unwrap();
        assert!(!out.report.converged);
        assert_eq!(out.report.steps_taken, 2);
    }

    #[test]
    fn invalid_config() {
        let cfg = PretrainConfig {
            alpha_p: 0.0,
            ..PretrainConfig::default()
        };
        assert!(pretrain(Matrix::identity(2), &cfg, false).is_err());
    }

    #[test]
    fn moment_closed_forms() {
        assert_eq!(expected_loss(1, 0.0, 0.0), 1.0);
        assert!((expected_loss(100, 0.0, 0.1) - 200.0).abs() < 1e-9);
        assert!((variance_loss_gaussian(100, 0.1) - 4.0).abs() < 1e-12);
        assert_eq!(variance_loss_gaussian(10, 0.0), 0.0);
        assert_eq!(variance_loss_gaussian(1, 1.0), 4.0);
        assert_eq!(variance_loss_uniform(7, 0.0), 0.0);
        assert!((variance_loss_uniform(100, 0.1) - (22.0 / 45.0 + 2.0 / 3.0)).abs() < 1e-12);
        assert!((variance_loss_uniform(1, 1.0) - 52.0 / 45.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_monte_carlo() {
        let stats = monte_carlo_loss_stats(
            7,
            &InitScheme::Gaussian { mean: 0.0, std: 0.0 },
            5,
            &mut RngStream::new(0),
        )
        .unwrap();
        assert_eq!(stats.mean, 7.0);
        assert_eq!(stats.variance, 0.0);
    }
}
