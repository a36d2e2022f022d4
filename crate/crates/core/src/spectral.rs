//! Largest singular value by power iteration on `mᵀm`.

use crate::error::{Error, Result};
use crate::matrix::{frobenius_norm_sq, vec_norm, Matrix};

/// Defaults used by the diagnostics when a per-checkpoint estimate is needed.
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 500;

/// Operator 2-norm of `m`.
///
/// Iterates `v ← mᵀm v / ‖mᵀm v‖` from the normalised all-ones vector and
/// stops once successive estimates `‖m v‖` agree to relative tolerance `tol`.
/// An all-zero matrix has norm 0.
pub fn spectral_norm(m: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::param(format!("tolerance must be positive, got {tol}")));
    }
    if frobenius_norm_sq(m) == 0.0 {
        return Ok(0.0);
    }
    let (rows, cols) = m.shape();
    let data = m.data();
    let mut v = vec![1.0 / (cols as f64).sqrt(); cols];
    let mut u = vec![0.0; rows];
    let mut w = vec![0.0; cols];
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        // u = m v
        for (i, ui) in u.iter_mut().enumerate() {
            let row = &data[i * cols..(i + 1) * cols];
            *ui = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let next = vec_norm(&u);
        // w = mᵀ u
        w.iter_mut().for_each(|x| *x = 0.0);
        for (i, ui) in u.iter().enumerate() {
            let row = &data[i * cols..(i + 1) * cols];
            w.iter_mut().zip(row).for_each(|(wj, a)| *wj += a * ui);
        }
        let wn = vec_norm(&w);
        if wn == 0.0 {
            // start vector lies in the null space
            return Ok(next);
        }
        w.iter().zip(v.iter_mut()).for_each(|(a, b)| *b = a / wn);
        if (next - estimate).abs() <= tol * next {
            return Ok(next);
        }
        estimate = next;
    }
    Err(Error::Convergence {
        iterations: max_iter,
        estimate,
    })
}

/// Like [`spectral_norm`] but returns the last estimate when the iteration
/// budget runs out.
pub fn spectral_norm_capped(m: &Matrix, tol: f64, max_iter: usize) -> f64 {
    match spectral_norm(m, tol, max_iter) {
        Ok(s) => s,
        Err(Error::Convergence { estimate, .. }) => estimate,
        Err(_) => f64::NAN,
    }
}
