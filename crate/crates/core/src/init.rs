//! Weight initialisation schemes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitScheme {
    /// Independent `N(mean, std²)` entries.
    Gaussian { mean: f64, std: f64 },
    /// Independent `U(-bound, bound)` entries.
    UniformSymmetric { bound: f64 },
    /// Glorot/Xavier: `U(±√6 / √(fan_in + fan_out))`, with `fan_in = cols`
    /// and `fan_out = rows`.
    Normalized,
}

impl InitScheme {
    pub fn gaussian(std: f64) -> Self {
        InitScheme::Gaussian { mean: 0.0, std }
    }

    pub fn uniform(bound: f64) -> Self {
        InitScheme::UniformSymmetric { bound }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            InitScheme::Gaussian { mean, std } => {
                if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
                    return Err(Error::param(format!(
                        "gaussian init needs finite mean and std > 0 (got mean {mean}, std {std})"
                    )));
                }
            }
            InitScheme::UniformSymmetric { bound } => {
                if !(bound > 0.0) || !bound.is_finite() {
                    return Err(Error::param(format!("uniform init needs bound > 0 (got {bound})")));
                }
            }
            InitScheme::Normalized => {}
        }
        Ok(())
    }

    /// Half-width of the normalised-initialisation interval for a
    /// `rows x cols` weight matrix.
    pub fn normalized_bound(rows: usize, cols: usize) -> f64 {
        6f64.sqrt() / ((rows + cols) as f64).sqrt()
    }

    /// Fills a matrix without checking parameters, so degenerate
    /// distributions (zero spread) are allowed.
    pub(crate) fn fill(&self, rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
        match *self {
            InitScheme::Gaussian { mean, std } => Matrix::from_fn(rows, cols, |_, _| rng.gaussian(mean, std)),
            InitScheme::UniformSymmetric { bound } => {
                Matrix::from_fn(rows, cols, |_, _| rng.uniform_range(-bound, bound))
            }
            InitScheme::Normalized => {
                let b = Self::normalized_bound(rows, cols);
                Matrix::from_fn(rows, cols, |_, _| rng.uniform_range(-b, b))
            }
        }
    }
}

/// Draws a `rows x cols` matrix from `scheme`.
pub fn sample(scheme: &InitScheme, rows: usize, cols: usize, rng: &mut RngStream) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::param(format!("cannot sample a {rows}x{cols} matrix")));
    }
    scheme.validate()?;
    Ok(scheme.fill(rows, cols, rng))
}
