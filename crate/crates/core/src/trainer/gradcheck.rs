use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::loss::{surrogate_loss, LossKind};
use crate::audio_io::MultichannelWaveform;
use crate::combinator::{sacc_features, sacc_features_backward, SaccParams};
use crate::error::Result;
use crate::spectral::{FeaturePipeline, MelConfig, StftConfig};

/// A random utterance and target used to probe the full feature pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSpec {
    pub frames: usize,
    pub channels: usize,
    pub stft: StftConfig,
    pub mel: MelConfig,
    pub loss: LossKind,
    pub seed: u64,
}

impl ProbeSpec {
    /// `T = 10`, `C = 4`, `F = 33` (64-point FFT), 8 Mel bands, L2 loss.
    pub fn toy(seed: u64) -> Self {
        Self {
            frames: 10,
            channels: 4,
            stft: StftConfig {
                win_ms: 4.0,
                hop_ms: 2.0,
                fft_size: 64,
                sample_rate_hz: 16000,
            },
            mel: MelConfig {
                n_filters: 8,
                ..MelConfig::default()
            },
            loss: LossKind::L2LogMel,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coordinates: Vec<CoordinateCheck>,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

struct Probe {
    pipeline: FeaturePipeline,
    wave: MultichannelWaveform,
    target: Array2<f64>,
    loss: LossKind,
}

impl Probe {
    fn new(spec: &ProbeSpec) -> Result<Self> {
        let pipeline = FeaturePipeline::new(spec.stft, spec.mel)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n = spec.stft.samples_for_frames(spec.frames);
        let wave = MultichannelWaveform::new(
            Array2::from_shape_simple_fn((n, spec.channels), || rng.random_range(-1.0..1.0)),
            spec.stft.sample_rate_hz,
        )?;
        let target = Array2::from_shape_simple_fn((spec.frames, spec.mel.n_filters), || {
            rng.sample::<f64, _>(StandardNormal)
        });
        Ok(Self {
            pipeline,
            wave,
            target,
            loss: spec.loss,
        })
    }

    fn loss(&self, params: &SaccParams) -> Result<f64> {
        let trace = sacc_features(&self.wave, params, &self.pipeline.stft, &self.pipeline.filterbank)?;
        Ok(surrogate_loss(trace.output().view(), self.target.view(), self.loss)?.0)
    }

    fn gradient(&self, params: &SaccParams) -> Result<SaccParams> {
        let trace = sacc_features(&self.wave, params, &self.pipeline.stft, &self.pipeline.filterbank)?;
        let (_, d_out) = surrogate_loss(trace.output().view(), self.target.view(), self.loss)?;
        Ok(sacc_features_backward(&trace, params, &self.pipeline.filterbank, d_out.view())?.params)
    }
}

/// Central differences on the given flat parameter indices versus the
/// backward pass, through STFT, MVN, the combinator, log-Mel and the loss.
pub fn grad_check_coordinates(
    params: &SaccParams,
    probe: &ProbeSpec,
    indices: &[usize],
    h: f64,
) -> Result<GradCheckReport> {
    let probe = Probe::new(probe)?;
    let grad = probe.gradient(params)?;
    let mut work = params.clone();
    let mut coordinates = Vec::with_capacity(indices.len());
    for &index in indices {
        let x = params.get_flat(index);
        work.set_flat(index, x + h);
        let up = probe.loss(&work)?;
        work.set_flat(index, x - h);
        let down = probe.loss(&work)?;
        work.set_flat(index, x);
        let numeric = (up - down) / (2.0 * h);
        let analytic = grad.get_flat(index);
        coordinates.push(CoordinateCheck {
            index,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
        });
    }
    let max_rel_err = coordinates.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_err,
        coordinates,
    })
}

/// [`grad_check_coordinates`] on `n_coords` indices drawn from the probe seed.
pub fn grad_check(params: &SaccParams, probe: &ProbeSpec, n_coords: usize, h: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(probe.seed.wrapping_add(1));
    let total = params.param_count();
    let indices: Vec<usize> = (0..n_coords).map(|_| rng.random_range(0..total)).collect();
    grad_check_coordinates(params, probe, &indices, h)
}
