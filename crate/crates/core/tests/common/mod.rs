#![allow(dead_code)]

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_array3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize), lo: f64, hi: f64) -> Array3<f64> {
    Array3::from_shape_simple_fn(shape, || rng.random_range(lo..hi))
}

pub fn random_array2(rng: &mut ChaCha8Rng, shape: (usize, usize), lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(lo..hi))
}

pub fn random_complex3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<Complex64> {
    Array3::from_shape_simple_fn(shape, || Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// T60 from Schroeder backward integration, extrapolated from a least-squares
/// line fit of the energy decay curve between -5 and -25 dB.
pub fn schroeder_t60(rir: &[f64], fs: f64) -> f64 {
    let mut edc = vec![0.0; rir.len()];
    let mut acc = 0.0;
    for i in (0..rir.len()).rev() {
        acc += rir[i] * rir[i];
        edc[i] = acc;
    }
    let total = edc[0];
    let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / total).log10()).collect();
    let start = db.iter().position(|&d| d <= -5.0).expect("decay reaches -5 dB");
    let stop = db.iter().position(|&d| d <= -25.0).expect("decay reaches -25 dB");
    let pts: Vec<(f64, f64)> = (start..=stop).map(|i| (i as f64 / fs, db[i])).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    -60.0 / (sxy / sxx)
}

/// Straight-line evaluation of the combinator for one utterance: explicit
/// loops for the projections, scaled dot-product attention, the channel
/// softmax and the weighted magnitude sum. Returns `(w, s)`.
pub fn sacc_oracle(z: &Array3<f64>, mag: &Array3<f64>, p: &sacc_core::SaccParams) -> (Array2<f64>, Array2<f64>) {
    let (t_len, c, f) = z.dim();
    let d = p.bq.len();
    let mut w_out = Array2::zeros((t_len, c));
    let mut s_out = Array2::zeros((t_len, f));
    for t in 0..t_len {
        let mut q = vec![vec![0.0; d]; c];
        let mut k = vec![vec![0.0; d]; c];
        let mut v = vec![0.0; c];
        for i in 0..c {
            for j in 0..d {
                let mut aq = p.bq[j];
                let mut ak = p.bk[j];
                for b in 0..f {
                    aq += z[[t, i, b]] * p.wq[[b, j]];
                    ak += z[[t, i, b]] * p.wk[[b, j]];
                }
                q[i][j] = aq;
                k[i][j] = ak;
            }
            let mut av = p.bv[0];
            for b in 0..f {
                av += z[[t, i, b]] * p.wv[b];
            }
            v[i] = av;
        }
        let mut u = vec![0.0; c];
        for i in 0..c {
            let logits: Vec<f64> = (0..c)
                .map(|j| (0..d).map(|m| q[i][m] * k[j][m]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let att = softmax(&logits);
            u[i] = (0..c).map(|j| att[j] * v[j]).sum();
        }
        let w = softmax(&u);
        for i in 0..c {
            w_out[[t, i]] = w[i];
            for b in 0..f {
                s_out[[t, b]] += w[i] * mag[[t, i, b]];
            }
        }
    }
    (w_out, s_out)
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Gaussian elimination with partial pivoting; solves `A X = B` for a
/// square `A` and any number of right-hand-side columns.
pub fn gauss_solve(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Array2<Complex64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut aug = Array2::<Complex64>::zeros((n, n + m));
    for i in 0..n {
        for j in 0..n {
            aug[[i, j]] = a[[i, j]];
        }
        for j in 0..m {
            aug[[i, n + j]] = b[[i, j]];
        }
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| aug[[x, col]].norm().total_cmp(&aug[[y, col]].norm()))
            .unwrap();
        for j in 0..n + m {
            aug.swap([col, j], [piv, j]);
        }
        let p = aug[[col, col]];
        for j in col..n + m {
            aug[[col, j]] /= p;
        }
        for r in 0..n {
            if r != col {
                let factor = aug[[r, col]];
                for j in col..n + m {
                    let delta = factor * aug[[col, j]];
                    aug[[r, j]] -= delta;
                }
            }
        }
    }
    Array2::from_shape_fn((n, m), |(i, j)| aug[[i, n + j]])
}

/// MVDR weights for one bin, `(phi_v^-1 phi_s u) / tr(phi_v^-1 phi_s)`.
pub fn mvdr_oracle(phi_v: &Array2<Complex64>, phi_s: &Array2<Complex64>, reference: usize) -> Vec<Complex64> {
    let x = gauss_solve(phi_v, phi_s);
    let tr: Complex64 = (0..x.nrows()).map(|i| x[[i, i]]).sum();
    (0..x.nrows()).map(|i| x[[i, reference]] / tr).collect()
}

/// `Y[t, f] = sum_c X[t, c, f] conj(h[f, c])` with plain loops.
pub fn apply_oracle(x: &Array3<Complex64>, h: &Array2<Complex64>) -> Array2<Complex64> {
    let (t_len, c, f_len) = x.dim();
    let mut y = Array2::zeros((t_len, f_len));
    for t in 0..t_len {
        for f in 0..f_len {
            let mut acc = Complex64::new(0.0, 0.0);
            for ci in 0..c {
                acc += x[[t, ci, f]] * h[[f, ci]].conj();
            }
            y[[t, f]] = acc;
        }
    }
    y
}

/// Random Hermitian positive definite `n x n` matrix, `A A^H + n I`.
pub fn random_hpd(rng: &mut ChaCha8Rng, n: usize) -> Array2<Complex64> {
    let a = Array2::from_shape_simple_fn((n, n), || Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let mut m = a.dot(&a.t().mapv(|z| z.conj()));
    for i in 0..n {
        m[[i, i]] += n as f64;
    }
    m
}

/// Parameters with every tensor, biases included, drawn from `[-s, s)`.
pub fn random_params(rng: &mut ChaCha8Rng, f: usize, d: usize, s: f64) -> sacc_core::SaccParams {
    let mut p = sacc_core::SaccParams::zeros(f, d);
    for t in p.tensors_mut() {
        for x in t.iter_mut() {
            *x = rng.random_range(-s..s);
        }
    }
    p
}

pub fn random_features(rng: &mut ChaCha8Rng, t: usize, c: usize, f: usize) -> sacc_core::spectral::MagnitudeFeatures {
    sacc_core::spectral::MagnitudeFeatures::from_magnitude(random_array3(rng, (t, c, f), 0.01, 3.0)).unwrap()
}

/// A fast profile: short utterances in small, dry rooms.
pub fn quick_profile() -> sacc_core::room_sim::SimulationProfile {
    let mut p = sacc_core::room_sim::SimulationProfile::default();
    p.utterance_s = [1.0, 1.2];
    p.room.t60_s = [0.27, 0.35];
    p.room.length_m = [4.0, 5.0];
    p.room.width_m = [3.5, 4.0];
    p
}

pub fn quick_dataset(n: usize, seed: u64) -> (tempfile::TempDir, sacc_core::DatasetManifest) {
    let dir = tempfile::tempdir().unwrap();
    let m = sacc_core::room_sim::build_dataset(n, seed, &quick_profile(), &Default::default(), dir.path()).unwrap();
    (dir, m)
}
