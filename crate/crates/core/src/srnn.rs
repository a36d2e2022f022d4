//! Simple recurrent network trained with backpropagation through time.
//!
//! Activations are batched: the input at step `t` is an `N x input` matrix
//! and hidden states are `N x hidden`, so
//!
//! ```text
//! h_t = φ(x_t W_xhᵀ + h_{t-1} W_hhᵀ + b_h)
//! y   = head(h_T W_hyᵀ + b_y)
//! ```
//!
//! with `φ` tanh (or identity) and the head softmax for cross-entropy or
//! linear for MSE. The loss is taken at the last step only and averaged over
//! the batch.

use serde::{Deserialize, Serialize};

use crate::activation::{Activation, LossKind};
use crate::error::{Error, Result};
use crate::init::{sample, InitScheme};
use crate::matrix::{gemm, vec_norm, Matrix, Op};
use crate::ortho::{penalty_gradient, pretrain, PretrainConfig, PretrainReport};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecurrentSizes {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentParams {
    /// hidden x input
    pub w_xh: Matrix,
    /// hidden x hidden
    pub w_hh: Matrix,
    /// output x hidden
    pub w_hy: Matrix,
    pub b_h: Vec<f64>,
    pub b_y: Vec<f64>,
    #[serde(default)]
    pub activation: Activation,
}

impl RecurrentParams {
    pub fn zeros(sizes: RecurrentSizes) -> Self {
        RecurrentParams {
            w_xh: Matrix::zeros(sizes.hidden, sizes.input),
            w_hh: Matrix::zeros(sizes.hidden, sizes.hidden),
            w_hy: Matrix::zeros(sizes.output, sizes.hidden),
            b_h: vec![0.0; sizes.hidden],
            b_y: vec![0.0; sizes.output],
            activation: Activation::Tanh,
        }
    }

    pub fn sizes(&self) -> RecurrentSizes {
        RecurrentSizes {
            input: self.w_xh.cols(),
            hidden: self.w_hh.rows(),
            output: self.w_hy.rows(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.w_hh.rows();
        let ok = self.w_hh.cols() == h
            && self.w_xh.rows() == h
            && self.w_hy.cols() == h
            && self.b_h.len() == h
            && self.b_y.len() == self.w_hy.rows();
        if !ok {
            return Err(Error::shape(
                "recurrent params",
                format!(
                    "w_xh {:?}, w_hh {:?}, w_hy {:?}, b_h {}, b_y {}",
                    self.w_xh.shape(),
                    self.w_hh.shape(),
                    self.w_hy.shape(),
                    self.b_h.len(),
                    self.b_y.len()
                ),
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.w_xh.is_finite()
            && self.w_hh.is_finite()
            && self.w_hy.is_finite()
            && self.b_h.iter().chain(&self.b_y).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub h0: Matrix,
    /// `h_1 .. h_T`
    pub hidden_states: Vec<Matrix>,
    /// Pre-activations `v_1 .. v_T` matching `hidden_states`.
    pub pre_activations: Vec<Matrix>,
    pub logits: Matrix,
    /// Softmax probabilities or linear outputs at the last step.
    pub output: Matrix,
}

impl ForwardTrace {
    pub fn last_hidden(&self) -> &Matrix {
        self.hidden_states.last().unwrap_or(&self.h0)
    }
}

fn check_inputs(params: &RecurrentParams, inputs: &[Matrix], h0: Option<&Matrix>) -> Result<usize> {
    params.validate()?;
    let batch = match (inputs.first(), h0) {
        (Some(x), _) => x.rows(),
        (None, Some(h)) => h.rows(),
        (None, None) => {
            return Err(Error::param("empty input sequence"));
        }
    };
    for (t, x) in inputs.iter().enumerate() {
        if x.rows() != batch || x.cols() != params.w_xh.cols() {
            return Err(Error::shape(
                "rnn_forward",
                format!(
                    "input at step {t} is {:?}, expected {batch}x{}",
                    x.shape(),
                    params.w_xh.cols()
                ),
            ));
        }
    }
    if let Some(h) = h0 {
        if h.shape() != (batch, params.w_hh.rows()) {
            return Err(Error::shape(
                "rnn_forward",
                format!("h0 is {:?}, expected {batch}x{}", h.shape(), params.w_hh.rows()),
            ));
        }
    }
    Ok(batch)
}

fn step(params: &RecurrentParams, x: &Matrix, h_prev: &Matrix) -> Matrix {
    let mut v = Matrix::zeros(x.rows(), params.w_hh.rows());
    gemm(1.0, x, Op::N, &params.w_xh, Op::T, 0.0, &mut v).expect("checked");
    gemm(1.0, h_prev, Op::N, &params.w_hh, Op::T, 1.0, &mut v).expect("checked");
    v.add_row_broadcast(&params.b_h).expect("checked");
    v
}

fn readout(params: &RecurrentParams, h: &Matrix) -> Matrix {
    let mut logits = Matrix::zeros(h.rows(), params.w_hy.rows());
    gemm(1.0, h, Op::N, &params.w_hy, Op::T, 0.0, &mut logits).expect("checked");
    logits.add_row_broadcast(&params.b_y).expect("checked");
    logits
}

/// Runs the network over `inputs`, keeping every hidden state.
/// `h0` defaults to zeros.
pub fn rnn_forward(
    params: &RecurrentParams,
    inputs: &[Matrix],
    h0: Option<&Matrix>,
    loss: LossKind,
) -> Result<ForwardTrace> {
    let batch = check_inputs(params, inputs, h0)?;
    let h0 = h0.cloned().unwrap_or_else(|| Matrix::zeros(batch, params.w_hh.rows()));
    let mut hidden_states = Vec::with_capacity(inputs.len());
    let mut pre_activations = Vec::with_capacity(inputs.len());
    for x in inputs {
        let v = step(params, x, hidden_states.last().unwrap_or(&h0));
        let mut h = v.clone();
        params.activation.apply_in_place(&mut h);
        pre_activations.push(v);
        hidden_states.push(h);
    }
    let logits = readout(params, hidden_states.last().unwrap_or(&h0));
    let output = loss.head(logits.clone());
    Ok(ForwardTrace {
        h0,
        hidden_states,
        pre_activations,
        logits,
        output,
    })
}

/// Forward pass that keeps only the running hidden state; for evaluation.
pub fn rnn_predict(params: &RecurrentParams, inputs: &[Matrix], loss: LossKind) -> Result<Matrix> {
    let batch = check_inputs(params, inputs, None)?;
    let mut h = Matrix::zeros(batch, params.w_hh.rows());
    for x in inputs {
        h = step(params, x, &h);
        params.activation.apply_in_place(&mut h);
    }
    Ok(loss.head(readout(params, &h)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentGrads {
    pub w_xh: Matrix,
    pub w_hh: Matrix,
    pub w_hy: Matrix,
    pub b_h: Vec<f64>,
    pub b_y: Vec<f64>,
}

impl RecurrentGrads {
    pub fn zeros_like(params: &RecurrentParams) -> Self {
        RecurrentGrads {
            w_xh: Matrix::zeros(params.w_xh.rows(), params.w_xh.cols()),
            w_hh: Matrix::zeros(params.w_hh.rows(), params.w_hh.cols()),
            w_hy: Matrix::zeros(params.w_hy.rows(), params.w_hy.cols()),
            b_h: vec![0.0; params.b_h.len()],
            b_y: vec![0.0; params.b_y.len()],
        }
    }

    /// Euclidean norm of all five tensors taken together.
    pub fn global_norm(&self) -> f64 {
        let sq = |m: &Matrix| m.data().iter().map(|x| x * x).sum::<f64>();
        let sv = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        (sq(&self.w_xh) + sq(&self.w_hh) + sq(&self.w_hy) + sv(&self.b_h) + sv(&self.b_y)).sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.w_xh.scale_in_place(s);
        self.w_hh.scale_in_place(s);
        self.w_hy.scale_in_place(s);
        self.b_h.iter_mut().chain(self.b_y.iter_mut()).for_each(|x| *x *= s);
    }
}

#[derive(Debug, Clone)]
pub struct RecurrentBackward {
    pub loss: f64,
    pub grads: RecurrentGrads,
    /// `‖∂E/∂h_t‖_F` for `t = 1..T`.
    pub hidden_grad_norms: Vec<f64>,
    pub output: Matrix,
}

/// Loss at the last step and exact gradients for every parameter tensor.
pub fn rnn_bptt(
    params: &RecurrentParams,
    inputs: &[Matrix],
    h0: Option<&Matrix>,
    target: &Matrix,
    loss: LossKind,
) -> Result<RecurrentBackward> {
    let trace = rnn_forward(params, inputs, h0, loss)?;
    rnn_backward(params, inputs, &trace, target, loss)
}

/// Backward pass over an existing forward trace.
pub fn rnn_backward(
    params: &RecurrentParams,
    inputs: &[Matrix],
    trace: &ForwardTrace,
    target: &Matrix,
    loss: LossKind,
) -> Result<RecurrentBackward> {
    let (value, dlogits) = loss.loss_and_grad(&trace.output, target)?;
    let steps = inputs.len();
    let sizes = params.sizes();
    let batch = trace.h0.rows();
    let mut grads = RecurrentGrads::zeros_like(params);

    let h_last = trace.last_hidden();
    gemm(1.0, &dlogits, Op::T, h_last, Op::N, 0.0, &mut grads.w_hy)?;
    grads.b_y = dlogits.column_sums();

    let mut dh = Matrix::zeros(batch, sizes.hidden);
    gemm(1.0, &dlogits, Op::N, &params.w_hy, Op::N, 0.0, &mut dh)?;

    // Stack the per-step pre-activation gradients so the weight gradients
    // become two large products instead of 2T small ones.
    let mut da_all = Matrix::zeros(steps * batch, sizes.hidden);
    let mut hidden_grad_norms = vec![0.0; steps];
    for t in (0..steps).rev() {
        hidden_grad_norms[t] = vec_norm(dh.data());
        let mut da = dh;
        params.activation.backprop_in_place(&mut da, &trace.hidden_states[t]);
        da_all.data_mut()[t * batch * sizes.hidden..(t + 1) * batch * sizes.hidden].copy_from_slice(da.data());
        dh = Matrix::zeros(batch, sizes.hidden);
        if t > 0 {
            gemm(1.0, &da, Op::N, &params.w_hh, Op::N, 0.0, &mut dh)?;
        }
    }
    if steps > 0 {
        let mut prev: Vec<&Matrix> = Vec::with_capacity(steps);
        prev.push(&trace.h0);
        prev.extend(trace.hidden_states[..steps - 1].iter());
        let h_prev = Matrix::vstack(&prev)?;
        let xs: Vec<&Matrix> = inputs.iter().collect();
        let x_all = Matrix::vstack(&xs)?;
        gemm(1.0, &da_all, Op::T, &h_prev, Op::N, 0.0, &mut grads.w_hh)?;
        gemm(1.0, &da_all, Op::T, &x_all, Op::N, 0.0, &mut grads.w_xh)?;
        grads.b_h = da_all.column_sums();
    }
    Ok(RecurrentBackward {
        loss: value,
        grads,
        hidden_grad_norms,
        output: trace.output.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UpdateRule {
    Vanilla {
        alpha: f64,
    },
    /// Vanilla step plus the orthogonality penalty on `W_hh` only.
    Open {
        alpha: f64,
        lambda: f64,
    },
    /// Rescale the whole gradient to norm `<= threshold`, then a vanilla step.
    Clipped {
        alpha: f64,
        threshold: f64,
    },
}

impl UpdateRule {
    pub fn alpha(&self) -> f64 {
        match *self {
            UpdateRule::Vanilla { alpha } | UpdateRule::Open { alpha, .. } | UpdateRule::Clipped { alpha, .. } => alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            UpdateRule::Vanilla { alpha } => alpha > 0.0,
            UpdateRule::Open { alpha, lambda } => alpha > 0.0 && lambda >= 0.0,
            UpdateRule::Clipped { alpha, threshold } => alpha > 0.0 && threshold > 0.0,
        };
        if !ok {
            return Err(Error::param(format!("invalid update rule {self:?}")));
        }
        Ok(())
    }
}

fn sgd(w: &mut Matrix, g: &Matrix, alpha: f64) -> Result<()> {
    w.axpy(-alpha, g)
}

fn sgd_vec(w: &mut [f64], g: &[f64], alpha: f64) -> Result<()> {
    if w.len() != g.len() {
        return Err(Error::shape("update", format!("{} vs {}", w.len(), g.len())));
    }
    w.iter_mut().zip(g).for_each(|(a, b)| *a -= alpha * b);
    Ok(())
}

/// Applies one update in place.
pub fn apply_update_in_place(params: &mut RecurrentParams, grads: &RecurrentGrads, rule: &UpdateRule) -> Result<()> {
    rule.validate()?;
    let alpha = rule.alpha();
    let penalty = match *rule {
        UpdateRule::Open { lambda, .. } if lambda > 0.0 => Some(penalty_gradient(&params.w_hh, lambda)?),
        _ => None,
    };
    let clipped;
    let grads = match *rule {
        UpdateRule::Clipped { threshold, .. } => {
            let norm = grads.global_norm();
            if norm > threshold {
                let mut g = grads.clone();
                g.scale(threshold / norm);
                clipped = g;
                &clipped
            } else {
                grads
            }
        }
        _ => grads,
    };
    sgd(&mut params.w_xh, &grads.w_xh, alpha)?;
    sgd(&mut params.w_hh, &grads.w_hh, alpha)?;
    sgd(&mut params.w_hy, &grads.w_hy, alpha)?;
    sgd_vec(&mut params.b_h, &grads.b_h, alpha)?;
    sgd_vec(&mut params.b_y, &grads.b_y, alpha)?;
    if let Some(p) = penalty {
        sgd(&mut params.w_hh, &p, alpha)?;
    }
    Ok(())
}

pub fn apply_update(params: &RecurrentParams, grads: &RecurrentGrads, rule: &UpdateRule) -> Result<RecurrentParams> {
    let mut next = params.clone();
    apply_update_in_place(&mut next, grads, rule)?;
    Ok(next)
}

/// Samples `W_xh`, `W_hh`, `W_hy` (in that order) from `scheme` with zero
/// biases, then optionally pre-trains `W_hh` towards orthogonality.
pub fn init_srnn(
    sizes: RecurrentSizes,
    scheme: &InitScheme,
    oinit: Option<&PretrainConfig>,
    rng: &mut RngStream,
) -> Result<(RecurrentParams, Option<PretrainReport>)> {
    if sizes.input == 0 || sizes.hidden == 0 || sizes.output == 0 {
        return Err(Error::param(format!("layer sizes must be positive: {sizes:?}")));
    }
    let w_xh = sample(scheme, sizes.hidden, sizes.input, rng)?;
    let mut w_hh = sample(scheme, sizes.hidden, sizes.hidden, rng)?;
    let w_hy = sample(scheme, sizes.output, sizes.hidden, rng)?;
    let mut report = None;
    if let Some(cfg) = oinit {
        let out = pretrain(w_hh, cfg, false)?;
        if !out.report.converged {
            return Err(Error::PretrainFailed {
                target: "W_hh".into(),
                steps: out.report.steps_taken,
                final_loss: out.report.final_loss,
            });
        }
        w_hh = out.weights;
        report = Some(out.report);
    }
    Ok((
        RecurrentParams {
            w_xh,
            w_hh,
            w_hy,
            b_h: vec![0.0; sizes.hidden],
            b_y: vec![0.0; sizes.output],
            activation: Activation::Tanh,
        },
        report,
    ))
}
