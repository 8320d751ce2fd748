use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use super::rir::RirSet;
use super::scene::NUM_MICS;
use crate::audio_io::MultichannelWaveform;
use crate::error::{Error, Result};

pub const REFERENCE_MIC: usize = 3;
pub const SELF_NOISE_SNR_DB: f64 = 45.0;
pub const SNR_RANGE_DB: [f64; 2] = [3.0, 25.0];
pub const GAIN_OFFSET_RANGE_DB: [f64; 2] = [0.1, 2.0];
pub const LEVEL_RANGE_DBFS: [f64; 2] = [-15.0, -1.0];

/// Mixing recipe for one scene. `noise_snr_db = +inf` disables the ambient
/// noise and `self_noise_snr_db = +inf` disables the sensor noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub noise_snr_db: f64,
    pub self_noise_snr_db: f64,
    /// Signed per-channel offsets; magnitudes in `[0.1, 2.0]` dB.
    pub gain_offsets_db: Vec<f64>,
    /// Target peak level of the rendered mixture.
    pub level_dbfs: f64,
}

/// Sampling ranges for [`MixSpec::sample`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixProfile {
    pub snr_db: [f64; 2],
    pub gain_offset_db: [f64; 2],
    pub level_dbfs: [f64; 2],
}

impl Default for MixProfile {
    fn default() -> Self {
        Self {
            snr_db: SNR_RANGE_DB,
            gain_offset_db: GAIN_OFFSET_RANGE_DB,
            level_dbfs: LEVEL_RANGE_DBFS,
        }
    }
}

fn within(x: f64, [lo, hi]: [f64; 2]) -> bool {
    x >= lo && x <= hi
}

impl MixProfile {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("snr_db", self.snr_db, SNR_RANGE_DB),
            ("gain_offset_db", self.gain_offset_db, GAIN_OFFSET_RANGE_DB),
            ("level_dbfs", self.level_dbfs, LEVEL_RANGE_DBFS),
        ];
        for (name, r, allowed) in checks {
            if !(r[0] <= r[1] && within(r[0], allowed) && within(r[1], allowed)) {
                return Err(Error::Config(format!(
                    "{name} range [{}, {}] must lie within [{}, {}]",
                    r[0], r[1], allowed[0], allowed[1]
                )));
            }
        }
        Ok(())
    }
}

impl MixSpec {
    pub fn sample(rng: &mut impl Rng, profile: &MixProfile) -> Self {
        let draw = |rng: &mut dyn rand::RngCore, [lo, hi]: [f64; 2]| {
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        };
        let noise_snr_db = draw(rng, profile.snr_db);
        let gain_offsets_db = (0..NUM_MICS)
            .map(|_| {
                let mag = draw(rng, profile.gain_offset_db);
                if rng.random_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        let level_dbfs = draw(rng, profile.level_dbfs);
        Self {
            noise_snr_db,
            self_noise_snr_db: SELF_NOISE_SNR_DB,
            gain_offsets_db,
            level_dbfs,
        }
    }

    /// Noise-free, unit-gain recipe peaking at full scale.
    pub fn passthrough(channels: usize) -> Self {
        Self {
            noise_snr_db: f64::INFINITY,
            self_noise_snr_db: f64::INFINITY,
            gain_offsets_db: vec![0.0; channels],
            level_dbfs: 0.0,
        }
    }

    /// Checks the training recipe ranges.
    pub fn validate_recipe(&self) -> Result<()> {
        if !within(self.noise_snr_db, SNR_RANGE_DB) {
            return Err(Error::Config(format!("noise SNR {} dB out of range", self.noise_snr_db)));
        }
        if self.self_noise_snr_db != SELF_NOISE_SNR_DB {
            return Err(Error::Config("self-noise SNR must be 45 dB".into()));
        }
        if self.gain_offsets_db.len() != NUM_MICS
            || !self
                .gain_offsets_db
                .iter()
                .all(|g| within(g.abs(), GAIN_OFFSET_RANGE_DB))
        {
            return Err(Error::Config("gain offsets must be 8 values with |g| in [0.1, 2.0] dB".into()));
        }
        if !within(self.level_dbfs, LEVEL_RANGE_DBFS) {
            return Err(Error::Config(format!("level {} dBFS out of range", self.level_dbfs)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RenderedMixture {
    pub mixture: MultichannelWaveform,
    /// Direct-path speech at the reference mic, with the same gains as the mixture.
    pub clean_ref: MultichannelWaveform,
    /// Reverberant speech component of `mixture`.
    pub speech: MultichannelWaveform,
    /// Ambient plus sensor noise component of `mixture`.
    pub noise: MultichannelWaveform,
    pub noise_looped: bool,
}

/// Linear convolution of `x` with `h`, keeping the first `out_len` samples.
pub fn fft_convolve(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; out_len];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |s: &[f64]| {
        let mut v: Vec<Complex64> = s.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        v.resize(n, Complex64::new(0.0, 0.0));
        v
    };
    let (mut a, mut b) = (pad(x), pad(h));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    let full = x.len() + h.len() - 1;
    (0..out_len)
        .map(|i| if i < full { a[i].re * scale } else { 0.0 })
        .collect()
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

fn db_to_amp(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Spatializes `clean` through `rirs`, adds ambient and sensor noise, applies
/// per-channel gain offsets and normalizes the joint peak.
///
/// The ambient gain is chosen so that reverberant speech over total additive
/// noise (ambient plus sensor) at the reference mic equals `noise_snr_db`.
pub fn render_mixture(
    clean: &MultichannelWaveform,
    rirs: &RirSet,
    noise: &MultichannelWaveform,
    mix: &MixSpec,
    seed: u64,
) -> Result<RenderedMixture> {
    if clean.num_channels() != 1 {
        return Err(Error::contract("clean source must be single-channel"));
    }
    let fs = rirs.sample_rate_hz;
    clean.require_rate(fs)?;
    let c_len = rirs.num_channels();
    let n = clean.num_samples();
    if mix.gain_offsets_db.len() != c_len {
        return Err(Error::contract(format!(
            "{} gain offsets for {c_len} channels",
            mix.gain_offsets_db.len()
        )));
    }
    if REFERENCE_MIC >= c_len {
        return Err(Error::contract("RIR set has no reference mic"));
    }
    let src: Vec<f64> = clean.channel(0).to_vec();
    if power(&src) == 0.0 {
        return Err(Error::contract("silent clean input makes the SNR undefined"));
    }

    let mut speech = Array2::zeros((n, c_len));
    for c in 0..c_len {
        let y = fft_convolve(&src, &rirs.rirs.row(c).to_vec(), n);
        speech.column_mut(c).assign(&Array1::from(y));
    }
    let direct_row = rirs.direct.row(REFERENCE_MIC).to_vec();
    let mut clean_ref = Array1::from(fft_convolve(&src, &direct_row, n));

    let ambient_on = mix.noise_snr_db.is_finite();
    let noise_looped = ambient_on && noise.num_samples() < n;
    let mut ambient = Array2::zeros((n, c_len));
    if ambient_on {
        noise.require_rate(fs)?;
        if noise.num_channels() != c_len {
            return Err(Error::contract(format!(
                "noise has {} channels, RIRs have {c_len}",
                noise.num_channels()
            )));
        }
        if noise.num_samples() == 0 {
            return Err(Error::contract("empty noise signal"));
        }
        for t in 0..n {
            ambient.row_mut(t).assign(&noise.samples.row(t % noise.num_samples()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sensor = Array2::zeros((n, c_len));
    if mix.self_noise_snr_db.is_finite() {
        for c in 0..c_len {
            let p = power(&speech.column(c).to_vec());
            let sigma = (p / 10f64.powf(mix.self_noise_snr_db / 10.0)).sqrt();
            for t in 0..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                sensor[[t, c]] = sigma * z;
            }
        }
    }

    let ps = power(&speech.column(REFERENCE_MIC).to_vec());
    let gain = if ambient_on {
        // Solve |g a + w|^2 = target for g >= 0 at the reference mic.
        let a = ambient.column(REFERENCE_MIC);
        let w = sensor.column(REFERENCE_MIC);
        let nf = n as f64;
        let paa = a.dot(&a) / nf;
        let paw = a.dot(&w) / nf;
        let pww = w.dot(&w) / nf;
        let target = ps / 10f64.powf(mix.noise_snr_db / 10.0);
        if paa == 0.0 {
            return Err(Error::contract("silent noise at the reference mic"));
        }
        let disc = paw * paw - paa * (pww - target);
        if disc < 0.0 || target < pww {
            return Err(Error::Config(format!(
                "requested SNR {} dB exceeds the sensor-noise limit",
                mix.noise_snr_db
            )));
        }
        (-paw + disc.sqrt()) / paa
    } else {
        0.0
    };
    let mut noise_part = ambient * gain + sensor;

    for (c, &g_db) in mix.gain_offsets_db.iter().enumerate() {
        let g = db_to_amp(g_db);
        speech.column_mut(c).mapv_inplace(|v| v * g);
        noise_part.column_mut(c).mapv_inplace(|v| v * g);
    }
    clean_ref.mapv_inplace(|v| v * db_to_amp(mix.gain_offsets_db[REFERENCE_MIC]));

    let mut mixture = &speech + &noise_part;
    let peak = mixture.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::contract("rendered mixture is silent"));
    }
    let scale = db_to_amp(mix.level_dbfs) / peak;
    for arr in [&mut mixture, &mut speech, &mut noise_part] {
        arr.mapv_inplace(|v| v * scale);
    }
    clean_ref.mapv_inplace(|v| v * scale);

    Ok(RenderedMixture {
        mixture: MultichannelWaveform::new(mixture, fs)?,
        clean_ref: MultichannelWaveform::new(clean_ref.insert_axis(Axis(1)), fs)?,
        speech: MultichannelWaveform::new(speech, fs)?,
        noise: MultichannelWaveform::new(noise_part, fs)?,
        noise_looped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convolution_matches_direct_sum() {
        let x = [1.0, -2.0, 0.5, 3.0];
        let h = [0.25, 0.0, -1.0];
        let y = fft_convolve(&x, &h, 6);
        for (i, &yi) in y.iter().enumerate() {
            let direct: f64 = (0..h.len())
                .filter(|&k| k <= i && i - k < x.len())
                .map(|k| h[k] * x[i - k])
                .sum();
            assert!((yi - direct).abs() < 1e-12);
        }
        assert_eq!(fft_convolve(&x, &h, 2).len(), 2);
    }

    #[test]
    fn recipe_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = MixSpec::sample(&mut rng, &MixProfile::default());
        spec.validate_recipe().unwrap();
        assert!(MixSpec::passthrough(8).validate_recipe().is_err());
        let bad = MixProfile {
            snr_db: [0.0, 10.0],
            ..MixProfile::default()
        };
        assert!(bad.validate().is_err());
    }
}
