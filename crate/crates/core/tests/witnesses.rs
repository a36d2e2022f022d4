//! Gradient-flow witnesses, penalty descent and determinism.

use orthonet_core::activation::{Activation, LossKind};
use orthonet_core::ffnet::{ff_apply_update, ff_backprop, init_ff, FeedforwardGrads};
use orthonet_core::init::InitScheme;
use orthonet_core::spectral::spectral_norm;
use orthonet_core::srnn::{
    apply_update, init_srnn, rnn_bptt, RecurrentGrads, RecurrentParams, RecurrentSizes, UpdateRule,
};
use orthonet_core::tasks::gen_temporal_order;
use orthonet_core::{ortho_loss, Matrix, RngStream};

fn random(rows: usize, cols: usize, std: f64, rng: &mut RngStream) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gaussian(0.0, std))
}

/// Product of `k` Householder reflections; orthogonal to rounding error.
fn householder_orthogonal(n: usize, k: usize, rng: &mut RngStream) -> Matrix {
    let mut q = Matrix::identity(n);
    for _ in 0..k {
        let v: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let vv: f64 = v.iter().map(|x| x * x).sum();
        // q <- q (I - 2 v vᵀ / vᵀv)
        for r in 0..n {
            let dot: f64 = (0..n).map(|c| q[(r, c)] * v[c]).sum();
            for c in 0..n {
                q[(r, c)] -= 2.0 * dot * v[c] / vv;
            }
        }
    }
    q
}

fn srnn(hidden: usize, rng: &mut RngStream) -> RecurrentParams {
    let sizes = RecurrentSizes {
        input: 6,
        hidden,
        output: 4,
    };
    init_srnn(sizes, &InitScheme::gaussian(0.3), None, rng).unwrap().0
}

#[test]
fn contracting_recurrence_vanishes() {
    let mut rng = RngStream::new(1);
    let mut p = srnn(20, &mut rng);
    let w = random(20, 20, 1.0, &mut rng);
    let s = spectral_norm(&w, 1e-13, 100_000).unwrap();
    p.w_hh = w.scaled(0.5 / s);
    let batch = gen_temporal_order(50, 4, &mut rng).unwrap();
    let back = rnn_bptt(&p, &batch.inputs, None, &batch.targets, LossKind::CrossEntropy).unwrap();
    let n = &back.hidden_grad_norms;
    let ratio = n[0] / n[49];
    assert!(ratio < 1e-10, "{ratio:e}");
}

#[test]
fn orthogonal_linear_recurrence_preserves_norm() {
    let mut rng = RngStream::new(2);
    let mut p = srnn(16, &mut rng);
    p.w_hh = householder_orthogonal(16, 16, &mut rng);
    p.activation = Activation::Linear;
    let batch = gen_temporal_order(50, 4, &mut rng).unwrap();
    let back = rnn_bptt(&p, &batch.inputs, None, &batch.targets, LossKind::CrossEntropy).unwrap();
    let n = &back.hidden_grad_norms;
    let ratio = n[0] / n[49];
    assert!((ratio - 1.0).abs() < 1e-8, "{ratio}");
}

#[test]
fn deep_tiny_feedforward_vanishes() {
    let mut rng = RngStream::new(3);
    let mut sizes = vec![784];
    sizes.extend([100; 10]);
    sizes.push(10);
    let (p, _) = init_ff(&sizes, &InitScheme::gaussian(0.001), None, &mut rng).unwrap();
    let x = Matrix::from_fn(20, 784, |_, _| rng.uniform());
    let mut t = Matrix::zeros(20, 10);
    (0..20).for_each(|b| t[(b, rng.below(10))] = 1.0);
    let (_, g) = ff_backprop(&p, &x, &t).unwrap();
    // The backpropagated error shrinks by roughly 0.01 per layer.
    let delta = |l: usize| g.hidden_layers[l].bias.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(delta(0) / delta(9) < 1e-6, "{:e}", delta(0) / delta(9));
    // With zero biases the activations shrink just as fast on the way up,
    // so every weight gradient is tiny, not only the early ones.
    assert!(g.weight_norms().iter().all(|&n| n < 1e-12), "{:?}", g.weight_norms());
}

#[test]
fn recurrent_penalty_descends_without_task_gradient() {
    let mut rng = RngStream::new(4);
    let mut p = srnn(30, &mut rng);
    let zero = RecurrentGrads::zeros_like(&p);
    let rule = UpdateRule::Open {
        alpha: 0.1,
        lambda: 0.5,
    };
    let mut prev = ortho_loss(&p.w_hh);
    for _ in 0..50 {
        let next = apply_update(&p, &zero, &rule).unwrap();
        assert_eq!(next.w_xh, p.w_xh);
        let loss = ortho_loss(&next.w_hh);
        assert!(loss < prev, "{loss} >= {prev}");
        prev = loss;
        p = next;
    }
}

#[test]
fn feedforward_penalty_descends_without_task_gradient() {
    let mut rng = RngStream::new(5);
    let (mut p, _) = init_ff(&[12, 8, 8, 3], &InitScheme::gaussian(0.2), None, &mut rng).unwrap();
    let zero = FeedforwardGrads::zeros_like(&p);
    let total = |q: &orthonet_core::ffnet::FeedforwardParams| q.weights().map(ortho_loss).sum::<f64>();
    let mut prev = total(&p);
    for _ in 0..50 {
        p = ff_apply_update(&p, &zero, 0.05, 0.5).unwrap();
        let loss = total(&p);
        assert!(loss < prev, "{loss} >= {prev}");
        prev = loss;
    }
}

fn trajectory(seed: u64) -> Vec<RecurrentParams> {
    let root = RngStream::new(seed);
    let mut init_rng = root.derive(0);
    let mut data_rng = root.derive(1);
    let mut p = srnn(10, &mut init_rng);
    let rule = UpdateRule::Open {
        alpha: 0.01,
        lambda: 0.1,
    };
    let mut out = Vec::new();
    for _ in 0..100 {
        let batch = gen_temporal_order(12, 5, &mut data_rng).unwrap();
        let back = rnn_bptt(&p, &batch.inputs, None, &batch.targets, LossKind::CrossEntropy).unwrap();
        p = apply_update(&p, &back.grads, &rule).unwrap();
        out.push(p.clone());
    }
    out
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let a = trajectory(9);
    let b = trajectory(9);
    let bits = |p: &RecurrentParams| -> Vec<u64> {
        [&p.w_xh, &p.w_hh, &p.w_hy]
            .iter()
            .flat_map(|m| m.data().iter().map(|x| x.to_bits()))
            .chain(p.b_h.iter().chain(&p.b_y).map(|x| x.to_bits()))
            .collect()
    };
    assert!(a.iter().zip(&b).all(|(x, y)| bits(x) == bits(y)));
    assert_ne!(bits(&a[99]), bits(&trajectory(10)[99]));
}
