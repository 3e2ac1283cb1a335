mod common;

use chartrans::featenc::EncodingMode;
use chartrans::numerics::{AttentionMask, Graph, Tensor, Var};
use common::*;

const TOL: f64 = 1e-4;

/// Scalar readout `Σ x ⊙ w` with fixed random weights, so that every output
/// element contributes a distinct amount.
fn readout(g: &mut Graph<'_>, x: Var, seed: u64) -> Var {
    let w = random_tensor(g.shape(x), &mut rng(seed));
    let w = g.input(w);
    let p = g.mul(x, w).unwrap();
    g.sum(p)
}

fn inputs(shapes: &[&[usize]], seed: u64) -> Vec<Tensor> {
    let mut r = rng(seed);
    shapes.iter().map(|s| random_tensor(s, &mut r)).collect()
}

#[test]
fn matmul_all_transpose_combinations() {
    for (ta, tb) in [(false, false), (false, true), (true, false), (true, true)] {
        let sa: &[usize] = if ta { &[4, 3] } else { &[3, 4] };
        let sb: &[usize] = if tb { &[5, 4] } else { &[4, 5] };
        let err = check_inputs(&inputs(&[sa, sb], 1), |g, v| {
            let y = g.matmul_t(v[0], v[1], ta, tb).unwrap();
            readout(g, y, 9)
        });
        assert!(err < TOL, "trans ({ta}, {tb}): {err}");
    }
}

#[test]
fn batched_and_broadcast_matmul() {
    let err = check_inputs(&inputs(&[&[2, 3, 4], &[2, 4, 3]], 2), |g, v| {
        let y = g.matmul(v[0], v[1]).unwrap();
        readout(g, y, 3)
    });
    assert!(err < TOL, "{err}");
    let err = check_inputs(&inputs(&[&[3, 2, 4], &[4, 5]], 4), |g, v| {
        let y = g.matmul(v[0], v[1]).unwrap();
        readout(g, y, 5)
    });
    assert!(err < TOL, "{err}");
    let err = check_inputs(&inputs(&[&[2, 3, 4], &[2, 5, 4]], 6), |g, v| {
        let y = g.matmul_nt(v[0], v[1]).unwrap();
        readout(g, y, 7)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn elementwise_ops() {
    let err = check_inputs(&inputs(&[&[3, 4], &[3, 4], &[4]], 8), |g, v| {
        let s = g.add(v[0], v[1]).unwrap();
        let m = g.mul(s, v[0]).unwrap();
        let r = g.add_row(m, v[2]).unwrap();
        let r = g.scale(r, -1.7);
        let r = g.relu(r);
        readout(g, r, 10)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn layer_norm() {
    let err = check_inputs(&inputs(&[&[4, 6], &[6], &[6]], 11), |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
        readout(g, y, 12)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn softmax_over_each_axis() {
    for axis in 0..3 {
        let err = check_inputs(&inputs(&[&[2, 3, 4]], 13), |g, v| {
            let y = g.softmax(v[0], axis).unwrap();
            readout(g, y, 14)
        });
        assert!(err < TOL, "axis {axis}: {err}");
    }
}

#[test]
fn masked_softmax_with_padding_and_causality() {
    let mask = AttentionMask {
        batch: 2,
        heads: 2,
        key_valid: Some(vec![true, true, true, true, true, true, false, false]),
        causal: true,
    };
    let err = check_inputs(&inputs(&[&[4, 3, 4]], 15), |g, v| {
        let y = g.masked_softmax(v[0], &mask).unwrap();
        readout(g, y, 16)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn embedding_reshape_permute() {
    let err = check_inputs(&inputs(&[&[5, 3]], 17), |g, v| {
        let e = g.embedding(v[0], &[4, 0, 4, 2, 1, 4]).unwrap();
        let e = g.reshape(e, &[2, 3, 3]).unwrap();
        let e = g.permute(e, &[2, 0, 1]).unwrap();
        readout(g, e, 18)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn label_smoothed_cross_entropy() {
    for eps in [0.0, 0.1] {
        let err = check_inputs(&inputs(&[&[5, 6]], 19), |g, v| {
            g.cross_entropy(v[0], &[3, 0, 5, 1, 0], eps, 0).unwrap()
        });
        assert!(err < TOL, "eps {eps}: {err}");
    }
}

#[test]
fn dropout_with_a_fixed_mask() {
    // Same seed for every evaluation, so the mask is fixed.
    let x = random_tensor(&[6, 5], &mut rng(20));
    let empty = chartrans::numerics::ParamStore::new();
    let f = |t: Tensor| {
        let mut g = Graph::new(&empty, true, rng(21));
        let v = g.input(t);
        let d = g.dropout(v, 0.4).unwrap();
        let y = readout(&mut g, d, 22);
        let grads = g.backward(y).unwrap();
        (g.value(y)[0], grads.wrt(v).map(<[f64]>::to_vec))
    };
    let (_, analytic) = f(x.clone().with_requires_grad(true));
    let analytic = analytic.unwrap();
    for j in 0..x.numel() {
        let mut p = x.clone();
        p.values_mut()[j] += FD_STEP;
        let mut m = x.clone();
        m.values_mut()[j] -= FD_STEP;
        let numeric = (f(p).0 - f(m).0) / (2.0 * FD_STEP);
        assert!(rel_err(analytic[j], numeric) < TOL);
    }
}

#[test]
fn tiny_model_loss_in_both_encoding_modes() {
    for mode in [EncodingMode::FeatureInvariant, EncodingMode::Vanilla] {
        let (model, batch) = tiny_setup(mode);
        let (err, checked) = check_params(&model.params, |g| model.loss(g, &batch, 0.1).unwrap());
        assert_eq!(checked, model.params.num_values());
        assert!(err < TOL, "{mode}: {err}");
    }
}
