//! Forward passes and the spectral norm against naive reference code.
#![allow(clippy::needless_range_loop)]

use orthonet_core::activation::LossKind;
use orthonet_core::ffnet::{ff_forward, init_ff};
use orthonet_core::init::InitScheme;
use orthonet_core::spectral::spectral_norm;
use orthonet_core::srnn::{init_srnn, rnn_forward, RecurrentSizes};
use orthonet_core::{Matrix, RngStream};

fn random(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gaussian(0.0, 0.7))
}

fn affine(w: &Matrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|i| {
            let mut s = b[i];
            for j in 0..w.cols() {
                s += w[(i, j)] * x[j];
            }
            s
        })
        .collect()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

#[test]
fn recurrence_matches_scalar_loop() {
    let mut rng = RngStream::new(2);
    let sizes = RecurrentSizes {
        input: 2,
        hidden: 3,
        output: 2,
    };
    let (mut p, _) = init_srnn(sizes, &InitScheme::gaussian(0.8), None, &mut rng).unwrap();
    p.b_h = vec![0.1, -0.2, 0.3];
    let inputs: Vec<Matrix> = (0..4).map(|_| random(2, 2, &mut rng)).collect();
    let trace = rnn_forward(&p, &inputs, None, LossKind::CrossEntropy).unwrap();

    for b in 0..2 {
        let mut h = vec![0.0; 3];
        for (t, x) in inputs.iter().enumerate() {
            let mut next = vec![0.0; 3];
            for i in 0..3 {
                let mut v = p.b_h[i];
                for j in 0..2 {
                    v += p.w_xh[(i, j)] * x[(b, j)];
                }
                for j in 0..3 {
                    v += p.w_hh[(i, j)] * h[j];
                }
                next[i] = v.tanh();
            }
            h = next;
            for i in 0..3 {
                assert!((trace.hidden_states[t][(b, i)] - h[i]).abs() <= 1e-12);
            }
        }
        let y = softmax(&affine(&p.w_hy, &p.b_y, &h));
        for (k, yk) in y.iter().enumerate() {
            assert!((trace.output[(b, k)] - yk).abs() <= 1e-12);
        }
    }
}

#[test]
fn feedforward_matches_per_neuron_loop() {
    let mut rng = RngStream::new(4);
    let (mut p, _) = init_ff(&[5, 4, 6, 3, 2], &InitScheme::gaussian(0.5), None, &mut rng).unwrap();
    for l in p.hidden_layers.iter_mut() {
        l.bias.iter_mut().for_each(|b| *b = rng.gaussian(0.0, 0.2));
    }
    let x = random(3, 5, &mut rng);
    let trace = ff_forward(&p, &x).unwrap();
    for b in 0..3 {
        let mut h = x.row(b).to_vec();
        for (l, layer) in p.hidden_layers.iter().enumerate() {
            h = affine(&layer.weights, &layer.bias, &h)
                .iter()
                .map(|v| v.tanh())
                .collect();
            for (i, hi) in h.iter().enumerate() {
                assert!((trace.activations[l][(b, i)] - hi).abs() <= 1e-12);
            }
        }
        let y = softmax(&affine(&p.output_layer.weights, &p.output_layer.bias, &h));
        for (k, yk) in y.iter().enumerate() {
            assert!((trace.output[(b, k)] - yk).abs() <= 1e-12);
        }
    }
}

/// Singular values by one-sided Jacobi rotations on the columns.
fn jacobi_singular_values(m: &Matrix) -> Vec<f64> {
    let (rows, cols) = m.shape();
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| m[(i, j)]).collect()).collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                let beta: f64 = a[q].iter().map(|x| x * x).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (x, y) = (a[p][i], a[q][i]);
                    a[p][i] = c * x - s * y;
                    a[q][i] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = a
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

#[test]
fn jacobi_oracle_sanity() {
    let sv = jacobi_singular_values(&Matrix::from_rows(&[[3.0, 0.0], [0.0, -2.0]]));
    assert!((sv[0] - 3.0).abs() < 1e-14 && (sv[1] - 2.0).abs() < 1e-14);
}

#[test]
fn power_iteration_matches_jacobi_svd() {
    let mut rng = RngStream::new(31);
    for (r, c) in [(20, 20), (20, 20), (7, 12), (12, 7)] {
        let m = random(r, c, &mut rng);
        let oracle = jacobi_singular_values(&m)[0];
        let s = spectral_norm(&m, 1e-13, 100_000).unwrap();
        assert!((s - oracle).abs() / oracle < 1e-6, "{r}x{c}: {s} vs {oracle}");
    }
}
