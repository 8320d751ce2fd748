mod common;

use common::*;
use ndarray::Array2;
use rand::Rng;
use sacc_core::combinator::{backward, forward};
use sacc_core::spectral::MagnitudeFeatures;
use sacc_core::trainer::{grad_check, grad_check_coordinates, relative_error, ProbeSpec};
use sacc_core::SaccParams;

fn inner(feats: &MagnitudeFeatures, p: &SaccParams, g: &Array2<f64>) -> f64 {
    (&forward(feats, p).unwrap().s * g).sum()
}

/// Fourth-order central difference; truncation error `O(h^4)`.
fn derivative(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

#[test]
fn combinator_parameter_gradients_match_central_differences() {
    let mut rng = rng(21);
    let (t, c, f, d) = (4, 3, 9, 5);
    for _ in 0..3 {
        let feats = random_features(&mut rng, t, c, f);
        let p = random_params(&mut rng, f, d, 0.6);
        let g = random_array2(&mut rng, (t, f), -1.0, 1.0);
        let acts = forward(&feats, &p).unwrap();
        let grads = backward(&feats, &p, &acts, g.view()).unwrap();
        let mut work = p.clone();
        for i in 0..p.param_count() {
            let numeric = derivative(
                |x| {
                    work.set_flat(i, x);
                    inner(&feats, &work, &g)
                },
                p.get_flat(i),
                1e-3,
            );
            work.set_flat(i, p.get_flat(i));
            let analytic = grads.params.get_flat(i);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
            assert!(err < 1e-6, "coordinate {i}: {analytic} vs {numeric}");
        }
    }
}

#[test]
fn combinator_magnitude_gradient_matches_central_differences() {
    let mut rng = rng(22);
    let (t, c, f, d) = (4, 3, 9, 5);
    let mag = random_array3(&mut rng, (t, c, f), 0.2, 2.0);
    let p = random_params(&mut rng, f, d, 0.6);
    let g = random_array2(&mut rng, (t, f), -1.0, 1.0);
    let feats = MagnitudeFeatures::from_magnitude(mag.clone()).unwrap();
    let acts = forward(&feats, &p).unwrap();
    let grads = backward(&feats, &p, &acts, g.view()).unwrap();
    for (idx, &x) in mag.indexed_iter() {
        let numeric = derivative(
            |v| {
                let mut m = mag.clone();
                m[idx] = v;
                inner(&MagnitudeFeatures::from_magnitude(m).unwrap(), &p, &g)
            },
            x,
            1e-4,
        );
        let analytic = grads.mag[idx];
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
        assert!(err < 1e-6, "{idx:?}: {analytic} vs {numeric}");
    }
}

#[test]
fn softmax_jacobian_matches_finite_differences() {
    let mut rng = rng(23);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(2..9);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = ndarray::Array1::from(softmax(&x));
        for j in 0..n {
            let mut e = ndarray::Array1::zeros(n);
            e[j] = 1.0;
            // Column j of the Jacobian is J^T e_j since J is symmetric.
            let col = sacc_core::combinator::softmax_backward(p.view(), e.view());
            for i in 0..n {
                let mut up = x.clone();
                up[i] += h;
                let mut down = x.clone();
                down[i] -= h;
                let numeric = (softmax(&up)[j] - softmax(&down)[j]) / (2.0 * h);
                worst = worst.max((col[i] - numeric).abs());
            }
        }
    }
    assert!(worst < 1e-8, "{worst:e}");
}

#[test]
fn full_pipeline_gradient_across_seeds() {
    for seed in 0..10 {
        let probe = ProbeSpec::toy(seed);
        let params = SaccParams::init(seed + 100, 33, 8);
        let report = grad_check(&params, &probe, 20, 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-4, "seed {seed}: {:e}", report.max_rel_err);
    }
}

#[test]
fn step_size_sweep_is_u_shaped() {
    let probe = ProbeSpec::toy(3);
    let params = SaccParams::init(7, 33, 8);
    // Truncation error dominates at the coarse end, round-off at the fine end.
    let indices: Vec<usize> = (0..20).map(|i| i * 13).collect();
    let errs: Vec<f64> = [1e-4, 1e-5, 1e-6]
        .iter()
        .map(|&h| {
            let r = grad_check_coordinates(&params, &probe, &indices, h).unwrap();
            r.coordinates.iter().map(|c| (c.analytic - c.numeric).abs()).sum::<f64>()
        })
        .collect();
    assert!(errs[1] < errs[0] && errs[1] < errs[2], "{errs:?}");
}

#[test]
fn dead_biases_have_zero_gradient_on_both_sides() {
    let probe = ProbeSpec::toy(5);
    let params = SaccParams::init(9, 33, 8);
    let (f, d) = (33, 8);
    // Flat layout: Wq, bq, Wk, bk, Wv, bv.
    let bk = (2 * f * d + d..2 * f * d + 2 * d).collect::<Vec<_>>();
    let bv = vec![params.param_count() - 1];
    let report = grad_check_coordinates(&params, &probe, &[bk, bv].concat(), 1e-5).unwrap();
    for c in &report.coordinates {
        assert!(c.analytic.abs() < 1e-12, "{c:?}");
        assert!(c.numeric.abs() < 1e-9, "{c:?}");
    }
    assert_eq!(relative_error(0.0, 0.0), 0.0);
}
