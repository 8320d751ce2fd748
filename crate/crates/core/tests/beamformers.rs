mod common;

use std::f64::consts::PI;

use common::*;
use ndarray::{Array1, Array2, Array3, Axis};
use num_complex::Complex64;
use rand::Rng;
use sacc_core::beamformers::{
    apply_beamformer, delay_and_sum, diffuse_coherence, estimate_cdr_mask, mvdr_weights, ula_steering_delays,
    BeamformerWeights, CovariancePair, ReferenceSelector, SPEED_OF_SOUND,
};
use sacc_core::spectral::Spectrogram;
use sacc_core::StftConfig;

const SPACING: f64 = 0.033;

/// Rank-1 speech covariance `d d^H` per bin with random steering vectors,
/// plus random Hermitian positive definite noise covariances.
fn rank_one_scene(rng: &mut rand_chacha::ChaCha8Rng, c: usize, f: usize) -> (CovariancePair, Array2<Complex64>) {
    let steer = Array2::from_shape_simple_fn((f, c), || Complex64::from_polar(rng.random_range(0.5..1.5), rng.random_range(-PI..PI)));
    let mut phi_s = Array3::zeros((f, c, c));
    let mut phi_v = Array3::zeros((f, c, c));
    for fi in 0..f {
        let d = steer.row(fi);
        phi_s
            .index_axis_mut(Axis(0), fi)
            .assign(&Array2::from_shape_fn((c, c), |(i, j)| d[i] * d[j].conj() * 2.5));
        phi_v.index_axis_mut(Axis(0), fi).assign(&random_hpd(rng, c));
    }
    (CovariancePair { phi_v, phi_s, fallback_bins: 0 }, steer)
}

#[test]
fn mvdr_is_distortionless_on_rank_one_scenes() {
    let mut rng = rng(31);
    for c in [2, 4, 8] {
        let (t, f) = (7, 12);
        let (cov, steer) = rank_one_scene(&mut rng, c, f);
        let reference = ReferenceSelector::new(c / 2, c).unwrap();
        let w = mvdr_weights(&cov, &reference).unwrap();
        let src = Array2::from_shape_simple_fn((t, f), || Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let spec = Spectrogram {
            bins: Array3::from_shape_fn((t, c, f), |(ti, ci, fi)| src[[ti, fi]] * steer[[fi, ci]]),
        };
        let y = apply_beamformer(&spec, &w).unwrap();
        for ti in 0..t {
            for fi in 0..f {
                let expect = src[[ti, fi]] * steer[[fi, reference.index()]];
                assert!((y[[ti, fi]] - expect).norm() < 1e-8);
            }
        }
    }
}

#[test]
fn mvdr_invariant_to_speech_covariance_scale() {
    let mut rng = rng(32);
    let (cov, _) = rank_one_scene(&mut rng, 6, 5);
    let reference = ReferenceSelector::middle(6);
    let base = mvdr_weights(&cov, &reference).unwrap();
    for alpha in [1e-3, 0.7, 42.0, 1e4] {
        let scaled = CovariancePair {
            phi_s: cov.phi_s.mapv(|z| z * alpha),
            ..cov.clone()
        };
        let w = mvdr_weights(&scaled, &reference).unwrap();
        let diff = (&w.h - &base.h).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "alpha {alpha}: {diff:e}");
    }
}

#[test]
fn mvdr_matches_gaussian_elimination_oracle() {
    let mut rng = rng(33);
    for _ in 0..20 {
        let c = rng.random_range(2..9);
        let f = 4;
        let phi_s = Array3::from_shape_fn((f, c, c), |_| Complex64::new(0.0, 0.0));
        let mut cov = CovariancePair { phi_v: phi_s.clone(), phi_s, fallback_bins: 0 };
        for fi in 0..f {
            cov.phi_v.index_axis_mut(Axis(0), fi).assign(&random_hpd(&mut rng, c));
            cov.phi_s.index_axis_mut(Axis(0), fi).assign(&random_hpd(&mut rng, c));
        }
        let r = rng.random_range(0..c);
        let w = mvdr_weights(&cov, &ReferenceSelector::new(r, c).unwrap()).unwrap();
        for fi in 0..f {
            let oracle = mvdr_oracle(
                &cov.phi_v.index_axis(Axis(0), fi).to_owned(),
                &cov.phi_s.index_axis(Axis(0), fi).to_owned(),
                r,
            );
            for ci in 0..c {
                assert!((w.h[[fi, ci]] - oracle[ci]).norm() < 1e-10);
            }
        }
    }
}

#[test]
fn apply_matches_loop_oracle() {
    let mut rng = rng(34);
    for _ in 0..20 {
        let (t, c, f) = (rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..20));
        let x = random_complex3(&mut rng, (t, c, f));
        let h = Array2::from_shape_simple_fn((f, c), || Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let y = apply_beamformer(&Spectrogram { bins: x.clone() }, &BeamformerWeights { h: h.clone() }).unwrap();
        let oracle = apply_oracle(&x, &h);
        assert!((&y - &oracle).iter().all(|z| z.norm() < 1e-12));
    }
}

#[test]
fn mvdr_shape_errors() {
    let mut rng = rng(35);
    let (cov, _) = rank_one_scene(&mut rng, 4, 3);
    assert!(mvdr_weights(&cov, &ReferenceSelector::middle(5)).is_err());
    assert!(ReferenceSelector::new(4, 4).is_err());
    let w = mvdr_weights(&cov, &ReferenceSelector::middle(4)).unwrap();
    let spec = Spectrogram { bins: Array3::zeros((2, 4, 5)) };
    assert!(apply_beamformer(&spec, &w).is_err());
}

fn coherent_pair(rng: &mut rand_chacha::ChaCha8Rng, t: usize, cfg: &StftConfig) -> Spectrogram {
    let f = cfg.num_bins();
    // Endfire plane wave: mic 1 hears mic 0 delayed by the spacing.
    let tau = SPACING / SPEED_OF_SOUND;
    let mut bins = Array3::zeros((t, 2, f));
    for ti in 0..t {
        for fi in 0..f {
            let s = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let n = |rng: &mut rand_chacha::ChaCha8Rng| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 0.01;
            bins[[ti, 0, fi]] = s + n(rng);
            bins[[ti, 1, fi]] = s * Complex64::from_polar(1.0, -2.0 * PI * cfg.bin_hz(fi) * tau) + n(rng);
        }
    }
    Spectrogram { bins }
}

#[test]
fn cdr_mask_high_for_coherent_pairs() {
    let cfg = StftConfig::default();
    let mut rng = rng(36);
    let spec = coherent_pair(&mut rng, 200, &cfg);
    let mask = estimate_cdr_mask(&spec, (0, 1), SPACING, &cfg).unwrap();
    let mean = mask.mask.mean().unwrap();
    assert!(mean > 0.9, "{mean}");
    assert!(mask.mask.iter().all(|m| (0.0..=1.0).contains(m)));
}

fn low_diffuse_bins(cfg: &StftConfig) -> Vec<usize> {
    (0..cfg.num_bins())
        .filter(|&f| diffuse_coherence(cfg.bin_hz(f), SPACING, SPEED_OF_SOUND).abs() < 0.2)
        .collect()
}

#[test]
fn cdr_mask_low_for_independent_noise() {
    let cfg = StftConfig::default();
    let mut rng = rng(37);
    let spec = Spectrogram { bins: random_complex3(&mut rng, (300, 2, cfg.num_bins())) };
    let mask = estimate_cdr_mask(&spec, (0, 1), SPACING, &cfg).unwrap();
    let bins = low_diffuse_bins(&cfg);
    assert!(!bins.is_empty());
    let mean = mask.mask.select(Axis(1), &bins).mean().unwrap();
    assert!(mean < 0.2, "{mean}");
    assert!(mask.mask.iter().all(|m| (0.0..=1.0).contains(m)));
}

#[test]
fn cdr_mask_bounded_on_arbitrary_input() {
    let cfg = StftConfig { fft_size: 64, win_ms: 4.0, hop_ms: 2.0, sample_rate_hz: 16000 };
    let mut rng = rng(38);
    for _ in 0..50 {
        let frames = rng.random_range(1..30);
        let mut bins = random_complex3(&mut rng, (frames, 3, cfg.num_bins()));
        // Sprinkle exact zeros and duplicated channels.
        bins[[0, 0, 0]] = Complex64::new(0.0, 0.0);
        let copy = bins.index_axis(Axis(1), 0).to_owned();
        bins.index_axis_mut(Axis(1), 2).assign(&copy);
        let spec = Spectrogram { bins };
        for pair in [(0, 1), (0, 2), (1, 2)] {
            let m = estimate_cdr_mask(&spec, pair, SPACING, &cfg).unwrap();
            assert!(m.mask.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }
}

#[test]
fn delay_and_sum_aligns_a_plane_wave() {
    let cfg = StftConfig::default();
    let (t, c, f) = (5, 8, cfg.num_bins());
    let mut rng = rng(39);
    let az = 30.0;
    let delays = ula_steering_delays(c, SPACING, az, SPEED_OF_SOUND);
    let src = Array2::from_shape_simple_fn((t, f), || Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let spec = Spectrogram {
        bins: Array3::from_shape_fn((t, c, f), |(ti, ci, fi)| {
            src[[ti, fi]] * Complex64::from_polar(1.0, -2.0 * PI * cfg.bin_hz(fi) * delays[ci])
        }),
    };
    let y = delay_and_sum(&spec, &delays, &cfg).unwrap();
    assert!((&y - &src).iter().all(|z| z.norm() < 1e-12));
    let zeros = Array1::<f64>::zeros(3);
    assert!(delay_and_sum(&spec, zeros.as_slice().unwrap(), &cfg).is_err());
}
