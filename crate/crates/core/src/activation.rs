//! Activations, output heads and their losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub fn tanh_map(m: &Matrix) -> Matrix {
    m.map(f64::tanh)
}

/// `1 - h²`, computed from the forward output `h = tanh(v)`.
pub fn tanh_deriv_from_output(h: &Matrix) -> Matrix {
    h.map(|x| 1.0 - x * x)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    softmax_rows_in_place(&mut out);
    out
}

pub(crate) fn softmax_rows_in_place(m: &mut Matrix) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
}

/// Hidden-unit nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Linear,
}

impl Activation {
    pub fn apply_in_place(self, m: &mut Matrix) {
        if self == Activation::Tanh {
            m.data_mut().iter_mut().for_each(|x| *x = x.tanh());
        }
    }

    /// Multiplies `grad` by the activation derivative, given the forward output.
    pub fn backprop_in_place(self, grad: &mut Matrix, output: &Matrix) {
        if self == Activation::Tanh {
            grad.data_mut()
                .iter_mut()
                .zip(output.data())
                .for_each(|(g, h)| *g *= 1.0 - h * h);
        }
    }
}

/// Loss at the output, which also fixes the output head: cross-entropy pairs
/// with a softmax layer, MSE with a linear one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

impl LossKind {
    /// Turns logits into network outputs.
    pub fn head(self, logits: Matrix) -> Matrix {
        match self {
            LossKind::CrossEntropy => {
                let mut out = logits;
                softmax_rows_in_place(&mut out);
                out
            }
            LossKind::Mse => logits,
        }
    }

    /// Batch-mean loss and its gradient with respect to the logits.
    ///
    /// Cross-entropy: `-(1/N) Σ t·ln y`, gradient `(y - t)/N`.
    /// MSE: `(1/N) Σ ‖y - t‖²`, gradient `2(y - t)/N`.
    pub fn loss_and_grad(self, output: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
        if output.shape() != target.shape() {
            return Err(Error::shape(
                "loss",
                format!("output {:?} vs target {:?}", output.shape(), target.shape()),
            ));
        }
        let n = output.rows() as f64;
        if output.rows() == 0 {
            return Err(Error::param("empty batch"));
        }
        let mut grad = output.sub(target)?;
        let loss = match self {
            LossKind::CrossEntropy => {
                let mut total = 0.0;
                for (y, t) in output.data().iter().zip(target.data()) {
                    if *t != 0.0 {
                        total -= t * y.max(f64::MIN_POSITIVE).ln();
                    }
                }
                grad.scale_in_place(1.0 / n);
                total / n
            }
            LossKind::Mse => {
                let total: f64 = grad.data().iter().map(|d| d * d).sum();
                grad.scale_in_place(2.0 / n);
                total / n
            }
        };
        Ok((loss, grad))
    }
}
