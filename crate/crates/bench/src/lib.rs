//! Deterministic inputs shared by the benchmarks.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sacc_core::spectral::{MagnitudeFeatures, Spectrogram};
use sacc_core::MultichannelWaveform;

pub const SAMPLE_RATE_HZ: u32 = 16_000;

/// Uniform noise in `[-0.5, 0.5)`, `samples x channels`.
pub fn noise_waveform(samples: usize, channels: usize, seed: u64) -> MultichannelWaveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array2::from_shape_fn((samples, channels), |_| rng.random_range(-0.5..0.5));
    MultichannelWaveform::new(data, SAMPLE_RATE_HZ).expect("valid waveform")
}

pub fn random_features(frames: usize, channels: usize, bins: usize, seed: u64) -> MagnitudeFeatures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mag = Array3::from_shape_fn((frames, channels, bins), |_| rng.random_range(0.01..2.0));
    MagnitudeFeatures::from_magnitude(mag).expect("valid magnitude")
}

pub fn random_spectrogram(frames: usize, channels: usize, bins: usize, seed: u64) -> Spectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Spectrogram {
        bins: Array3::from_shape_fn((frames, channels, bins), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        }),
    }
}
