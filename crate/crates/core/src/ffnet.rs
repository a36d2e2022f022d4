//! Deep tanh feedforward classifier with a softmax output.

use serde::{Deserialize, Serialize};

use crate::activation::{Activation, LossKind};
use crate::error::{Error, Result};
use crate::init::{sample, InitScheme};
use crate::matrix::{gemm, Matrix, Op};
use crate::ortho::{penalty_gradient, pretrain, PretrainConfig, PretrainReport};
use crate::rng::RngStream;

/// One affine layer; `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(out: usize, inp: usize) -> Self {
        Layer {
            weights: Matrix::zeros(out, inp),
            bias: vec![0.0; out],
        }
    }

    fn affine(&self, x: &Matrix) -> Matrix {
        let mut v = Matrix::zeros(x.rows(), self.weights.rows());
        gemm(1.0, x, Op::N, &self.weights, Op::T, 0.0, &mut v).expect("shapes checked");
        v.add_row_broadcast(&self.bias).expect("shapes checked");
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedforwardParams {
    pub hidden_layers: Vec<Layer>,
    pub output_layer: Layer,
}

impl FeedforwardParams {
    /// All-zero network with layer widths `sizes = [input, hidden.., output]`.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        let n = sizes.len();
        Ok(FeedforwardParams {
            hidden_layers: sizes[..n - 1].windows(2).map(|w| Layer::zeros(w[1], w[0])).collect(),
            output_layer: Layer::zeros(sizes[n - 1], sizes[n - 2]),
        })
    }

    pub fn input_size(&self) -> usize {
        self.hidden_layers.first().unwrap_or(&self.output_layer).weights.cols()
    }

    /// Hidden weights followed by the output weights.
    pub fn weights(&self) -> impl Iterator<Item = &Matrix> {
        self.hidden_layers
            .iter()
            .chain(std::iter::once(&self.output_layer))
            .map(|l| &l.weights)
    }

    pub fn validate(&self) -> Result<()> {
        let mut width = self.input_size();
        for (i, l) in self
            .hidden_layers
            .iter()
            .chain(std::iter::once(&self.output_layer))
            .enumerate()
        {
            if l.weights.cols() != width || l.bias.len() != l.weights.rows() {
                return Err(Error::shape(
                    "feedforward params",
                    format!(
                        "layer {} is {:?} with bias {}, expected {width} inputs",
                        i + 1,
                        l.weights.shape(),
                        l.bias.len()
                    ),
                ));
            }
            width = l.weights.rows();
        }
        Ok(())
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::param(format!(
            "need at least input and output widths, all positive (got {sizes:?})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FFTrace {
    /// `v_1 .. v_L`
    pub pre_activations: Vec<Matrix>,
    /// `h_ℓ = tanh(v_ℓ)`
    pub activations: Vec<Matrix>,
    pub logits: Matrix,
    /// Softmax probabilities.
    pub output: Matrix,
}

/// Forward pass over a batch of row vectors `x` (`N x input`).
pub fn ff_forward(params: &FeedforwardParams, x: &Matrix) -> Result<FFTrace> {
    params.validate()?;
    if x.cols() != params.input_size() {
        return Err(Error::shape(
            "ff_forward",
            format!(
                "input has {} features, network expects {}",
                x.cols(),
                params.input_size()
            ),
        ));
    }
    let mut pre_activations = Vec::with_capacity(params.hidden_layers.len());
    let mut activations: Vec<Matrix> = Vec::with_capacity(params.hidden_layers.len());
    for layer in &params.hidden_layers {
        let v = layer.affine(activations.last().unwrap_or(x));
        let mut h = v.clone();
        Activation::Tanh.apply_in_place(&mut h);
        pre_activations.push(v);
        activations.push(h);
    }
    let logits = params.output_layer.affine(activations.last().unwrap_or(x));
    let output = LossKind::CrossEntropy.head(logits.clone());
    Ok(FFTrace {
        pre_activations,
        activations,
        logits,
        output,
    })
}

/// Class probabilities without keeping the trace.
pub fn ff_predict(params: &FeedforwardParams, x: &Matrix) -> Result<Matrix> {
    params.validate()?;
    if x.cols() != params.input_size() {
        return Err(Error::shape(
            "ff_predict",
            format!(
                "input has {} features, network expects {}",
                x.cols(),
                params.input_size()
            ),
        ));
    }
    let mut h = x.clone();
    for layer in &params.hidden_layers {
        h = layer.affine(&h);
        Activation::Tanh.apply_in_place(&mut h);
    }
    Ok(LossKind::CrossEntropy.head(params.output_layer.affine(&h)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedforwardGrads {
    pub hidden_layers: Vec<Layer>,
    pub output_layer: Layer,
}

impl FeedforwardGrads {
    pub fn zeros_like(params: &FeedforwardParams) -> Self {
        let z = |l: &Layer| Layer::zeros(l.weights.rows(), l.weights.cols());
        FeedforwardGrads {
            hidden_layers: params.hidden_layers.iter().map(z).collect(),
            output_layer: z(&params.output_layer),
        }
    }

    /// Frobenius norms of the weight gradients, first hidden layer first,
    /// output layer last.
    pub fn weight_norms(&self) -> Vec<f64> {
        self.hidden_layers
            .iter()
            .chain(std::iter::once(&self.output_layer))
            .map(|l| l.weights.frobenius_norm())
            .collect()
    }
}

/// Mean cross-entropy over the batch and its exact gradients.
/// `target` is one-hot, `N x classes`.
pub fn ff_backprop(params: &FeedforwardParams, x: &Matrix, target: &Matrix) -> Result<(f64, FeedforwardGrads)> {
    let trace = ff_forward(params, x)?;
    let (loss, dlogits) = LossKind::CrossEntropy.loss_and_grad(&trace.output, target)?;
    let mut grads = FeedforwardGrads::zeros_like(params);

    let last = trace.activations.last().unwrap_or(x);
    gemm(1.0, &dlogits, Op::T, last, Op::N, 0.0, &mut grads.output_layer.weights)?;
    grads.output_layer.bias = dlogits.column_sums();

    let mut upstream = (&params.output_layer, dlogits);
    for l in (0..params.hidden_layers.len()).rev() {
        let (above, delta_above) = upstream;
        let mut delta = Matrix::zeros(x.rows(), params.hidden_layers[l].weights.rows());
        gemm(1.0, &delta_above, Op::N, &above.weights, Op::N, 0.0, &mut delta)?;
        Activation::Tanh.backprop_in_place(&mut delta, &trace.activations[l]);
        let input = if l == 0 { x } else { &trace.activations[l - 1] };
        gemm(
            1.0,
            &delta,
            Op::T,
            input,
            Op::N,
            0.0,
            &mut grads.hidden_layers[l].weights,
        )?;
        grads.hidden_layers[l].bias = delta.column_sums();
        upstream = (&params.hidden_layers[l], delta);
    }
    Ok((loss, grads))
}

/// `W ← W - α(∇W + λ ∇‖WWᵀ - I‖²)` for every weight matrix, plain SGD for
/// biases.
pub fn ff_apply_update_in_place(
    params: &mut FeedforwardParams,
    grads: &FeedforwardGrads,
    alpha: f64,
    lambda: f64,
) -> Result<()> {
    if !(alpha > 0.0) || !(lambda >= 0.0) {
        return Err(Error::param(format!(
            "need alpha > 0 and lambda >= 0 (got {alpha}, {lambda})"
        )));
    }
    if grads.hidden_layers.len() != params.hidden_layers.len() {
        return Err(Error::shape(
            "ff_apply_update",
            format!(
                "{} gradient layers for {} layers",
                grads.hidden_layers.len(),
                params.hidden_layers.len()
            ),
        ));
    }
    let layers = params
        .hidden_layers
        .iter_mut()
        .chain(std::iter::once(&mut params.output_layer))
        .zip(grads.hidden_layers.iter().chain(std::iter::once(&grads.output_layer)));
    for (layer, grad) in layers {
        if lambda > 0.0 {
            let p = penalty_gradient(&layer.weights, lambda)?;
            layer.weights.axpy(-alpha, &grad.weights)?;
            layer.weights.axpy(-alpha, &p)?;
        } else {
            layer.weights.axpy(-alpha, &grad.weights)?;
        }
        if layer.bias.len() != grad.bias.len() {
            return Err(Error::shape("ff_apply_update", "bias length"));
        }
        layer.bias.iter_mut().zip(&grad.bias).for_each(|(b, g)| *b -= alpha * g);
    }
    Ok(())
}

pub fn ff_apply_update(
    params: &FeedforwardParams,
    grads: &FeedforwardGrads,
    alpha: f64,
    lambda: f64,
) -> Result<FeedforwardParams> {
    let mut next = params.clone();
    ff_apply_update_in_place(&mut next, grads, alpha, lambda)?;
    Ok(next)
}

/// Pre-trains one weight matrix (index into hidden layers, with
/// `hidden_layers.len()` meaning the output layer), leaving the rest alone.
pub fn pretrain_layer(params: &mut FeedforwardParams, index: usize, cfg: &PretrainConfig) -> Result<PretrainReport> {
    let n = params.hidden_layers.len();
    let layer = if index < n {
        &mut params.hidden_layers[index]
    } else if index == n {
        &mut params.output_layer
    } else {
        return Err(Error::param(format!("no layer {index}")));
    };
    let w = std::mem::replace(&mut layer.weights, Matrix::zeros(0, 0));
    let out = pretrain(w, cfg, false)?;
    layer.weights = out.weights;
    if !out.report.converged {
        let target = if index < n {
            format!("hidden layer {}", index + 1)
        } else {
            "output layer".into()
        };
        return Err(Error::PretrainFailed {
            target,
            steps: out.report.steps_taken,
            final_loss: out.report.final_loss,
        });
    }
    Ok(out.report)
}

/// Samples every weight matrix from `scheme` (first hidden layer first),
/// zero biases, then optionally pre-trains each weight matrix in turn,
/// output layer included.
pub fn init_ff(
    layer_sizes: &[usize],
    scheme: &InitScheme,
    oinit: Option<&PretrainConfig>,
    rng: &mut RngStream,
) -> Result<(FeedforwardParams, Vec<PretrainReport>)> {
    check_sizes(layer_sizes)?;
    let mut params = FeedforwardParams::zeros(layer_sizes)?;
    for layer in params
        .hidden_layers
        .iter_mut()
        .chain(std::iter::once(&mut params.output_layer))
    {
        layer.weights = sample(scheme, layer.weights.rows(), layer.weights.cols(), rng)?;
    }
    let mut reports = Vec::new();
    if let Some(cfg) = oinit {
        for i in 0..=params.hidden_layers.len() {
            reports.push(pretrain_layer(&mut params, i, cfg)?);
        }
    }
    Ok((params, reports))
}
