//! Synthetic sources used when no speech or noise corpus is supplied.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoisePreset {
    /// 1/f spectrum.
    Pink,
    /// Sum of several overlapping synthetic talkers.
    Babble,
    /// Blade-pass harmonics over low-frequency rumble.
    Fan,
}

impl NoisePreset {
    pub const ALL: [NoisePreset; 3] = [NoisePreset::Pink, NoisePreset::Babble, NoisePreset::Fan];
}

const NOISE_FLOOR: f64 = 1e-3;

fn normalize_rms(x: &mut [f64]) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
}

/// White Gaussian noise shaped by the amplitude response `gain(f_hz)`.
fn shaped_noise(rng: &mut ChaCha8Rng, n: usize, fs: f64, gain: impl Fn(f64) -> f64) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        *v *= gain(bin as f64 * fs / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    normalize_rms(&mut out);
    out
}

fn lorentz(f: f64, centre: f64, bw: f64) -> f64 {
    1.0 / (1.0 + ((f - centre) / (0.5 * bw)).powi(2))
}

/// Speech-like test signal: voiced syllables from a gliding harmonic source
/// under formant envelopes, interleaved with fricative bursts and pauses.
/// A recording noise floor 60 dB below the signal is added; output has
/// unit RMS.
pub fn synthetic_speech(seed: u64, num_samples: usize, fs: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = fs as f64;
    let mut out = vec![0.0; num_samples];
    let base_f0: f64 = rng.random_range(95.0..220.0);
    let mut t = (rng.random_range(0.05..0.25) * fs) as usize;
    while t < num_samples {
        let voiced = rng.random_bool(0.75);
        let dur = (rng.random_range(if voiced { 0.12..0.32 } else { 0.05..0.14 }) * fs) as usize;
        let end = (t + dur).min(num_samples);
        let len = end - t;
        let amp = rng.random_range(0.4..1.0);
        if voiced {
            let formants = [
                (rng.random_range(300.0..850.0), rng.random_range(60.0..120.0)),
                (rng.random_range(850.0..2300.0), rng.random_range(80.0..150.0)),
                (rng.random_range(2300.0..3200.0), rng.random_range(120.0..250.0)),
            ];
            let f0_start = base_f0 * rng.random_range(0.85..1.2);
            let f0_end = base_f0 * rng.random_range(0.8..1.15);
            let harmonics = (4000.0 / f0_start.min(f0_end)) as usize;
            let mut phase = vec![0.0; harmonics];
            for k in 0..harmonics {
                phase[k] = rng.random_range(0.0..TAU);
            }
            for i in 0..len {
                let u = i as f64 / len as f64;
                let f0 = f0_start + (f0_end - f0_start) * u;
                let env = amp * (PI * u).sin().powf(0.6);
                let mut s = 0.0;
                for (k, ph) in phase.iter_mut().enumerate() {
                    let fk = f0 * (k + 1) as f64;
                    *ph += TAU * fk / fs;
                    if fk > 7800.0 {
                        continue;
                    }
                    let shape: f64 = formants
                        .iter()
                        .enumerate()
                        .map(|(j, &(c, bw))| lorentz(fk, c, bw) / (1 + j) as f64)
                        .sum();
                    s += (0.05 + shape) / (k + 1) as f64 * ph.sin();
                }
                out[t + i] += env * s;
            }
        } else {
            let centre = rng.random_range(3000.0..6500.0);
            let burst = shaped_noise(&mut rng, len, fs, |f| lorentz(f, centre, 2500.0));
            for (i, b) in burst.iter().enumerate() {
                let u = i as f64 / len as f64;
                out[t + i] += 0.3 * amp * (PI * u).sin() * b;
            }
        }
        let gap = if rng.random_bool(0.15) {
            rng.random_range(0.2..0.45)
        } else {
            rng.random_range(0.02..0.09)
        };
        t = end + (gap * fs) as usize;
    }
    normalize_rms(&mut out);
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += NOISE_FLOOR * z;
    }
    normalize_rms(&mut out);
    out
}

/// Unit-RMS noise of the given preset.
pub fn synthetic_noise(preset: NoisePreset, seed: u64, num_samples: usize, fs: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fsf = fs as f64;
    let mut out = match preset {
        NoisePreset::Pink => shaped_noise(&mut rng, num_samples, fsf, |f| 1.0 / f.max(20.0).sqrt()),
        NoisePreset::Babble => {
            let talkers = 6;
            let mut acc = vec![0.0; num_samples];
            for _ in 0..talkers {
                let s = synthetic_speech(rng.random(), num_samples, fs);
                acc.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
            }
            acc
        }
        NoisePreset::Fan => {
            let blade = rng.random_range(60.0..180.0);
            let mut rumble = shaped_noise(&mut rng, num_samples, fsf, |f| {
                lorentz(f, 0.0, 400.0) + 0.05 / (1.0 + f / 1000.0)
            });
            let phases: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..TAU)).collect();
            for (i, r) in rumble.iter_mut().enumerate() {
                let tt = i as f64 / fsf;
                let tone: f64 = phases
                    .iter()
                    .enumerate()
                    .map(|(k, p)| (TAU * blade * (k + 1) as f64 * tt + p).sin() / (k + 1) as f64)
                    .sum();
                *r += 0.5 * tone;
            }
            rumble
        }
    };
    normalize_rms(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_rms_and_deterministic() {
        for preset in NoisePreset::ALL {
            let a = synthetic_noise(preset, 4, 8000, 16000);
            let rms = (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt();
            assert!((rms - 1.0).abs() < 1e-9);
            assert_eq!(a, synthetic_noise(preset, 4, 8000, 16000));
        }
        let s = synthetic_speech(1, 16000, 16000);
        assert_eq!(s.len(), 16000);
        assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn speech_has_pauses() {
        let s = synthetic_speech(9, 48000, 16000);
        let quiet = s
            .chunks(160)
            .filter(|c| c.iter().map(|v| v * v).sum::<f64>() / 160.0 < 1e-4)
            .count();
        assert!(quiet > 10);
    }
}
