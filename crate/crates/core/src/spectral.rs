//! STFT analysis, log-magnitude normalization and log-Mel features.
//!
//! Every normalization step here has a matching backward routine so the
//! combinator's gradients can flow through the feature pipeline.

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayViewMut1, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio_io::MultichannelWaveform;
use crate::error::{Error, Result};

/// Floor applied to linear magnitudes (and Mel energies) before the log.
pub const LOG_FLOOR: f64 = 1e-10;
/// Added to the per-bin variance in utterance-level MVN.
pub const MVN_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub win_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    pub sample_rate_hz: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            win_ms: 25.0,
            hop_ms: 10.0,
            fft_size: 512,
            sample_rate_hz: 16000,
        }
    }
}

impl StftConfig {
    pub fn win_len(&self) -> usize {
        (self.win_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    /// One-sided bin count, `fft_size / 2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn num_frames(&self, num_samples: usize) -> Option<usize> {
        let win = self.win_len();
        (num_samples >= win).then(|| 1 + (num_samples - win) / self.hop_len())
    }

    /// Number of samples spanned by exactly `frames` frames.
    pub fn samples_for_frames(&self, frames: usize) -> usize {
        self.win_len() + frames.saturating_sub(1) * self.hop_len()
    }

    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate_hz as f64 / self.fft_size as f64
    }

    pub fn validate(&self) -> Result<()> {
        let win = self.win_len();
        if win == 0 || self.hop_len() == 0 {
            return Err(Error::Config("window and hop must be at least one sample".into()));
        }
        if self.fft_size < win {
            return Err(Error::Config(format!(
                "fft_size {} is shorter than the {win}-sample window",
                self.fft_size
            )));
        }
        Ok(())
    }

    /// Periodic Hann window of `win_len` samples.
    pub fn window(&self) -> Array1<f64> {
        let n = self.win_len();
        Array1::from_shape_fn(n, |i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
    }
}

/// Complex multichannel STFT, `T x C x F`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: Array3<Complex64>,
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.bins.dim().0
    }

    pub fn num_channels(&self) -> usize {
        self.bins.dim().1
    }

    pub fn num_bins(&self) -> usize {
        self.bins.dim().2
    }

    pub fn magnitude(&self) -> Array3<f64> {
        self.bins.mapv(|z| z.norm())
    }

    pub fn select_channel(&self, c: usize) -> Spectrogram {
        Spectrogram {
            bins: self.bins.slice(s![.., c..c + 1, ..]).to_owned(),
        }
    }
}

pub fn stft(wave: &MultichannelWaveform, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    wave.require_rate(cfg.sample_rate_hz)?;
    let n = wave.num_samples();
    let win_len = cfg.win_len();
    let frames = cfg.num_frames(n).ok_or(Error::TooShort {
        samples: n,
        required: win_len,
    })?;
    let hop = cfg.hop_len();
    let n_bins = cfg.num_bins();
    let channels = wave.num_channels();
    let window = cfg.window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);

    let mut bins = Array3::<Complex64>::zeros((frames, channels, n_bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for c in 0..channels {
        let x = wave.channel(c);
        for t in 0..frames {
            let start = t * hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < win_len {
                    Complex64::new(window[i] * x[start + i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            bins.slice_mut(s![t, c, ..])
                .iter_mut()
                .zip(&buf[..n_bins])
                .for_each(|(dst, src)| *dst = *src);
        }
    }
    Ok(Spectrogram { bins })
}

/// Linear magnitude and its per-(channel, bin) utterance-normalized log.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeFeatures {
    pub mag: Array3<f64>,
    pub normalized_logmag: Array3<f64>,
    /// `1 / sqrt(var + eps)` per `(c, f)`, kept for the backward pass.
    pub inv_std: Array2<f64>,
}

impl MagnitudeFeatures {
    pub fn from_magnitude(mag: Array3<f64>) -> Result<Self> {
        let mag = if mag.is_standard_layout() {
            mag
        } else {
            mag.as_standard_layout().into_owned()
        };
        let (t, c, f) = mag.dim();
        if t < 2 {
            return Err(Error::DegenerateUtterance { frames: t });
        }
        if mag.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::contract("magnitudes must be finite and non-negative"));
        }
        let mut normalized_logmag = mag.mapv(floored_ln);
        let mut inv_std = Array2::zeros((c, f));
        for ci in 0..c {
            for fi in 0..f {
                inv_std[[ci, fi]] = mvn_in_place(normalized_logmag.slice_mut(s![.., ci, fi]));
            }
        }
        Ok(Self {
            mag,
            normalized_logmag,
            inv_std,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.mag.dim()
    }

    /// Maps a gradient w.r.t. `normalized_logmag` back onto `mag`.
    pub fn backward_normalized(&self, d_norm: &Array3<f64>) -> Array3<f64> {
        let (_, c, f) = self.mag.dim();
        let mut d_mag = Array3::zeros(self.mag.dim());
        for ci in 0..c {
            for fi in 0..f {
                let dl = mvn_backward(
                    self.normalized_logmag.slice(s![.., ci, fi]),
                    self.inv_std[[ci, fi]],
                    d_norm.slice(s![.., ci, fi]),
                );
                let mut out = d_mag.slice_mut(s![.., ci, fi]);
                for (ti, g) in dl.into_iter().enumerate() {
                    out[ti] = g * floored_ln_grad(self.mag[[ti, ci, fi]]);
                }
            }
        }
        d_mag
    }
}

pub fn magnitude_and_normalize(spec: &Spectrogram) -> Result<MagnitudeFeatures> {
    MagnitudeFeatures::from_magnitude(spec.magnitude())
}

fn floored_ln(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

fn floored_ln_grad(x: f64) -> f64 {
    if x > LOG_FLOOR {
        1.0 / x
    } else {
        0.0
    }
}

/// Normalizes `x` to zero mean and (biased) unit variance in place and
/// returns `1 / sqrt(var + MVN_EPS)`.
pub fn mvn_in_place(mut x: ArrayViewMut1<'_, f64>) -> f64 {
    let n = x.len() as f64;
    let first = x[0];
    // exact zero output for constant input; a summed mean can be off by an ulp
    let mean = if x.iter().all(|&v| v == first) {
        first
    } else {
        x.sum() / n
    };
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + MVN_EPS).sqrt();
    x.mapv_inplace(|v| (v - mean) * inv_std);
    inv_std
}

/// Vector-Jacobian product of MVN, given its output `y` and upstream `g`:
/// `dx = inv_std * (g - mean(g) - y * mean(g * y))`.
pub fn mvn_backward(y: ArrayView1<'_, f64>, inv_std: f64, g: ArrayView1<'_, f64>) -> Array1<f64> {
    let n = y.len() as f64;
    let g_mean = g.sum() / n;
    let gy_mean = g.iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
    Array1::from_shape_fn(y.len(), |i| inv_std * (g[i] - g_mean - y[i] * gy_mean))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_filters: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_filters: 64,
            f_min: 0.0,
            f_max: 8000.0,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular Mel filters sampled on the STFT bin grid, `M x F`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
}

impl MelFilterbank {
    pub fn new(mel: &MelConfig, stft: &StftConfig) -> Result<Self> {
        if mel.n_filters == 0 {
            return Err(Error::Config("need at least one Mel filter".into()));
        }
        let nyquist = stft.sample_rate_hz as f64 / 2.0;
        if !(0.0 <= mel.f_min && mel.f_min < mel.f_max && mel.f_max <= nyquist) {
            return Err(Error::Config(format!(
                "Mel range [{}, {}] Hz must lie within [0, {nyquist}]",
                mel.f_min, mel.f_max
            )));
        }
        let (lo, hi) = (hz_to_mel(mel.f_min), hz_to_mel(mel.f_max));
        let m = mel.n_filters;
        let edges: Vec<f64> = (0..m + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (m + 1) as f64))
            .collect();
        let n_bins = stft.num_bins();
        let weights = Array2::from_shape_fn((m, n_bins), |(mi, fi)| {
            let f = stft.bin_hz(fi);
            let (l, c, r) = (edges[mi], edges[mi + 1], edges[mi + 2]);
            let rise = (f - l) / (c - l);
            let fall = (r - f) / (r - c);
            rise.min(fall).max(0.0)
        });
        if let Some(empty) = weights.outer_iter().position(|row| row.sum() <= 0.0) {
            return Err(Error::Config(format!(
                "Mel filter {empty} covers no STFT bin; use fewer filters or a larger FFT"
            )));
        }
        Ok(Self { weights })
    }

    pub fn num_filters(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.weights.ncols()
    }
}

/// Output of [`log_mel`] plus what its backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMel {
    /// MVN-normalized log-Mel features, `T x M`.
    pub features: Array2<f64>,
    energies: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LogMel {
    /// Gradient w.r.t. the `T x F` input given a gradient w.r.t. `features`.
    pub fn backward(&self, fb: &MelFilterbank, d_features: ArrayView2<'_, f64>) -> Array2<f64> {
        let (t, m) = self.features.dim();
        let mut d_energy = Array2::zeros((t, m));
        for mi in 0..m {
            let dl = mvn_backward(
                self.features.column(mi),
                self.inv_std[mi],
                d_features.column(mi),
            );
            for ti in 0..t {
                d_energy[[ti, mi]] = dl[ti] * floored_ln_grad(self.energies[[ti, mi]]);
            }
        }
        d_energy.dot(&fb.weights)
    }
}

/// Mel filterbank, floored log, then per-band utterance MVN.
pub fn log_mel(frame_features: ArrayView2<'_, f64>, fb: &MelFilterbank) -> Result<LogMel> {
    let (t, f) = frame_features.dim();
    if f != fb.num_bins() {
        return Err(Error::contract(format!(
            "input has {f} bins, filterbank expects {}",
            fb.num_bins()
        )));
    }
    if t < 2 {
        return Err(Error::DegenerateUtterance { frames: t });
    }
    if frame_features.iter().any(|x| !x.is_finite()) {
        return Err(Error::contract("log-Mel input must be finite"));
    }
    let energies = frame_features.dot(&fb.weights.t());
    let mut features = energies.mapv(floored_ln);
    let inv_std = Array1::from_iter(
        features
            .axis_iter_mut(Axis(1))
            .map(mvn_in_place),
    );
    Ok(LogMel {
        features,
        energies,
        inv_std,
    })
}

/// Log-Mel features of a single-channel magnitude spectrogram.
pub fn single_channel_log_mel(
    wave: &MultichannelWaveform,
    channel: usize,
    cfg: &StftConfig,
    fb: &MelFilterbank,
) -> Result<Array2<f64>> {
    let spec = stft(&wave.extract_channel(channel), cfg)?;
    let mag = spec.magnitude().index_axis_move(Axis(1), 0);
    Ok(log_mel(mag.view(), fb)?.features)
}

/// STFT settings together with the Mel filterbank built for them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePipeline {
    pub stft: StftConfig,
    pub mel: MelConfig,
    pub filterbank: MelFilterbank,
}

impl FeaturePipeline {
    pub fn new(stft: StftConfig, mel: MelConfig) -> Result<Self> {
        stft.validate()?;
        let filterbank = MelFilterbank::new(&mel, &stft)?;
        Ok(Self {
            stft,
            mel,
            filterbank,
        })
    }

    /// 25 ms / 10 ms / 512-point STFT at 16 kHz, 64 Mel bands over 0-8 kHz.
    pub fn standard() -> Self {
        Self::new(StftConfig::default(), MelConfig::default()).expect("default configuration is valid")
    }

    pub fn num_bins(&self) -> usize {
        self.stft.num_bins()
    }

    pub fn magnitude_features(&self, wave: &MultichannelWaveform) -> Result<MagnitudeFeatures> {
        magnitude_and_normalize(&stft(wave, &self.stft)?)
    }

    /// Mel energies in dB, `T x M`, floored like the log-Mel features.
    pub fn mel_energies_db(&self, mag: ArrayView2<'_, f64>) -> Array2<f64> {
        mag.dot(&self.filterbank.weights.t())
            .mapv(|e| 10.0 * e.max(LOG_FLOOR).log10())
    }
}
