//! Monte Carlo checks of the closed-form moments of the orthogonality loss
//! at random initialisation.

use orthonet_core::init::InitScheme;
use orthonet_core::ortho::{expected_loss, monte_carlo_loss_stats, variance_loss_gaussian, variance_loss_uniform};
use orthonet_core::RngStream;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Mean must land within this many standard errors.
pub const MEAN_TOLERANCE_SE: f64 = 3.0;
/// Relative tolerance on the variance.
pub const VARIANCE_TOLERANCE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub scheme: String,
    pub m: usize,
    pub samples: usize,
    pub mc_mean: f64,
    pub expected_mean: f64,
    pub standard_error: f64,
    pub mc_variance: f64,
    pub expected_variance: f64,
    pub mean_ok: bool,
    pub variance_ok: bool,
}

impl MomentCheck {
    pub fn passed(&self) -> bool {
        self.mean_ok && self.variance_ok
    }

    pub fn variance_rel_error(&self) -> f64 {
        (self.mc_variance - self.expected_variance).abs() / self.expected_variance
    }
}

/// Closed-form mean and variance for the supported zero-mean schemes.
pub fn closed_form(scheme: &InitScheme, m: usize) -> Result<(f64, f64)> {
    match *scheme {
        InitScheme::Gaussian { mean: 0.0, std } => Ok((expected_loss(m, 0.0, std), variance_loss_gaussian(m, std))),
        InitScheme::UniformSymmetric { bound } => {
            let sigma = bound / 3f64.sqrt();
            Ok((expected_loss(m, 0.0, sigma), variance_loss_uniform(m, bound)))
        }
        _ => Err(HarnessError::Config(format!("no closed-form moments for {scheme:?}"))),
    }
}

pub fn scheme_label(scheme: &InitScheme) -> String {
    match *scheme {
        InitScheme::Gaussian { mean, std } => format!("gaussian({mean},{std})"),
        InitScheme::UniformSymmetric { bound } => format!("uniform(-{bound},{bound})"),
        InitScheme::Normalized => "normalized".into(),
    }
}

/// One check per `(scheme, m)` pair, each on its own derived stream.
pub fn verify_moments(schemes: &[InitScheme], sizes: &[usize], samples: usize, seed: u64) -> Result<Vec<MomentCheck>> {
    let root = RngStream::new(seed);
    let mut out = Vec::new();
    for (si, scheme) in schemes.iter().enumerate() {
        for (mi, &m) in sizes.iter().enumerate() {
            let (expected_mean, expected_variance) = closed_form(scheme, m)?;
            let mut rng = root.derive((si * sizes.len() + mi) as u64);
            let stats = monte_carlo_loss_stats(m, scheme, samples, &mut rng)?;
            let se = stats.standard_error(samples);
            out.push(MomentCheck {
                scheme: scheme_label(scheme),
                m,
                samples,
                mc_mean: stats.mean,
                expected_mean,
                standard_error: se,
                mc_variance: stats.variance,
                expected_variance,
                mean_ok: (stats.mean - expected_mean).abs() <= MEAN_TOLERANCE_SE * se,
                variance_ok: (stats.variance - expected_variance).abs() <= VARIANCE_TOLERANCE * expected_variance,
            });
        }
    }
    Ok(out)
}
