use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;

use super::SPEED_OF_SOUND;
use crate::error::{Error, Result};
use crate::spectral::{Spectrogram, StftConfig};

/// Time-frequency speech-presence weights in `[0, 1]`, `T x F`.
#[derive(Debug, Clone, PartialEq)]
pub struct CdrMask {
    pub mask: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdrConfig {
    /// First-order recursion factor for the auto/cross PSD estimates.
    pub smoothing: f64,
    pub speed_of_sound: f64,
}

impl Default for CdrConfig {
    fn default() -> Self {
        Self {
            smoothing: 0.95,
            speed_of_sound: SPEED_OF_SOUND,
        }
    }
}

/// Spatial coherence of an ideal spherically diffuse field between two
/// omnidirectional mics, `sin(x) / x` with `x = 2 pi f d / c`.
pub fn diffuse_coherence(freq_hz: f64, spacing_m: f64, speed_of_sound: f64) -> f64 {
    let x = 2.0 * PI * freq_hz * spacing_m / speed_of_sound;
    if x.abs() < 1e-12 {
        1.0
    } else {
        x.sin() / x
    }
}

pub fn estimate_cdr_mask(
    spec: &Spectrogram,
    mic_pair: (usize, usize),
    spacing_m: f64,
    stft: &StftConfig,
) -> Result<CdrMask> {
    estimate_cdr_mask_with(spec, mic_pair, spacing_m, stft, &CdrConfig::default())
}

/// CDR-based mask `cdr / (cdr + 1)` from a mic pair's short-time coherence.
///
/// The PSD recursion is seeded with the utterance average so the first
/// frames do not start from a single-snapshot (fully coherent) estimate.
pub fn estimate_cdr_mask_with(
    spec: &Spectrogram,
    mic_pair: (usize, usize),
    spacing_m: f64,
    stft: &StftConfig,
    cfg: &CdrConfig,
) -> Result<CdrMask> {
    let (a, b) = mic_pair;
    let (t_len, c, f_len) = spec.bins.dim();
    if a == b {
        return Err(Error::contract("CDR needs two distinct channels"));
    }
    if a >= c || b >= c {
        return Err(Error::contract(format!(
            "mic pair ({a}, {b}) out of range for {c} channels"
        )));
    }
    if !(spacing_m > 0.0) {
        return Err(Error::contract("mic spacing must be positive"));
    }
    if !(0.0..1.0).contains(&cfg.smoothing) {
        return Err(Error::Config("coherence smoothing must lie in [0, 1)".into()));
    }
    if t_len == 0 {
        return Err(Error::DegenerateUtterance { frames: 0 });
    }

    let lambda = cfg.smoothing;
    let mut mask = Array2::zeros((t_len, f_len));
    for f in 0..f_len {
        let gamma_n = diffuse_coherence(stft.bin_hz(f), spacing_m, cfg.speed_of_sound);
        let (mut p11, mut p22, mut p12) = (0.0, 0.0, Complex64::new(0.0, 0.0));
        for t in 0..t_len {
            let (x1, x2) = (spec.bins[[t, a, f]], spec.bins[[t, b, f]]);
            p11 += x1.norm_sqr();
            p22 += x2.norm_sqr();
            p12 += x1 * x2.conj();
        }
        let n = t_len as f64;
        let (mut p11, mut p22, mut p12) = (p11 / n, p22 / n, p12 / n);
        for t in 0..t_len {
            let (x1, x2) = (spec.bins[[t, a, f]], spec.bins[[t, b, f]]);
            p11 = lambda * p11 + (1.0 - lambda) * x1.norm_sqr();
            p22 = lambda * p22 + (1.0 - lambda) * x2.norm_sqr();
            p12 = p12 * lambda + x1 * x2.conj() * (1.0 - lambda);
            let denom = (p11 * p22).sqrt();
            let gamma_x = if denom > 0.0 {
                p12 / denom
            } else {
                Complex64::new(0.0, 0.0)
            };
            let cdr = cdr_doa_independent(gamma_x, gamma_n);
            mask[[t, f]] = (cdr / (cdr + 1.0)).clamp(0.0, 1.0);
        }
    }
    Ok(CdrMask { mask })
}

/// DOA-independent CDR estimate from the measured complex coherence and the
/// diffuse-noise coherence model.
fn cdr_doa_independent(gamma_x: Complex64, gamma_n: f64) -> f64 {
    const MAX_COHERENCE: f64 = 1.0 - 1e-6;
    let mag = gamma_x.norm();
    let gamma_x = if mag > MAX_COHERENCE {
        gamma_x * (MAX_COHERENCE / mag)
    } else {
        gamma_x
    };
    let re = gamma_x.re;
    let abs2 = gamma_x.norm_sqr();
    let gn2 = gamma_n * gamma_n;
    let radicand = gn2 * re * re - gn2 * abs2 + gn2 - 2.0 * gamma_n * re + abs2;
    let cdr = (gamma_n * re - abs2 - radicand.max(0.0).sqrt()) / (abs2 - 1.0);
    if cdr.is_finite() {
        cdr.max(0.0)
    } else {
        0.0
    }
}
