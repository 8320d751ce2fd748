use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::loss::{surrogate_loss, LossKind};
use crate::audio_io::{read_wav, DatasetManifest, ManifestEntry, MultichannelWaveform};
use crate::combinator::{backward, forward, save_checkpoint, SaccParams, DEFAULT_ATTENTION_DIM};
use crate::error::{Error, Result};
use crate::spectral::{log_mel, FeaturePipeline, MagnitudeFeatures};

/// Training settings, loadable from TOML; every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    pub loss: LossKind,
    /// Drives shuffling and the validation split.
    pub seed: u64,
    /// Utterances are truncated to this many frames.
    pub max_frames: Option<usize>,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    pub validation_fraction: f64,
    /// Attention width for freshly initialized parameters.
    pub attention_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 4,
            max_epochs: 30,
            patience: 5,
            loss: LossKind::L1LogMel,
            seed: 0,
            max_frames: Some(300),
            max_steps: None,
            validation_fraction: 0.1,
            attention_dim: DEFAULT_ATTENTION_DIM,
        }
    }
}

impl TrainConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.attention_dim == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs, patience and attention_dim must be at least 1".into(),
            ));
        }
        if self.max_frames.is_some_and(|m| m < 2) {
            return Err(Error::Config("max_frames must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the step losses seen during the epoch.
    pub train_loss: f64,
    /// Loss on the held-out split, or on the whole training split when no
    /// utterance is held out.
    pub monitor_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Batch loss before each optimizer step.
    pub step_losses: Vec<f64>,
    pub best_epoch: usize,
    pub best_loss: f64,
    /// `"validation"` or `"training"`.
    pub monitored: String,
    pub stopped_early: bool,
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
    pub checkpoint_path: Option<PathBuf>,
}

impl TrainReport {
    /// `1 - last / first` over the recorded step losses.
    pub fn loss_reduction(&self) -> Option<f64> {
        let first = *self.step_losses.first()?;
        let last = *self.step_losses.last()?;
        (first > 0.0).then(|| 1.0 - last / first)
    }
}

/// One utterance ready for training: mixture features and the clean
/// reference log-Mel target.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub id: String,
    pub features: MagnitudeFeatures,
    pub target: Array2<f64>,
}

impl TrainingExample {
    pub fn frames(&self) -> usize {
        self.target.nrows()
    }
}

fn truncated(mut wave: MultichannelWaveform, pipeline: &FeaturePipeline, max_frames: Option<usize>) -> MultichannelWaveform {
    if let Some(m) = max_frames {
        let n = pipeline.stft.samples_for_frames(m);
        if wave.num_samples() > n {
            wave.truncate(n);
        }
    }
    wave
}

pub fn prepare_example(
    entry: &ManifestEntry,
    pipeline: &FeaturePipeline,
    max_frames: Option<usize>,
) -> Result<TrainingExample> {
    let mix = truncated(read_wav(&entry.mixture_path)?, pipeline, max_frames);
    let clean = truncated(read_wav(&entry.clean_reference_path)?, pipeline, max_frames);
    mix.require_rate(pipeline.stft.sample_rate_hz)?;
    clean.require_rate(pipeline.stft.sample_rate_hz)?;
    if clean.num_samples() != mix.num_samples() {
        return Err(Error::contract(format!(
            "{}: clean reference has {} samples, mixture {}",
            entry.scene_id,
            clean.num_samples(),
            mix.num_samples()
        )));
    }
    let features = pipeline.magnitude_features(&mix)?;
    let clean_mag = pipeline.magnitude_features(&clean)?.mag;
    let target = log_mel(clean_mag.index_axis(ndarray::Axis(1), 0), &pipeline.filterbank)?.features;
    Ok(TrainingExample {
        id: entry.scene_id.clone(),
        features,
        target,
    })
}

/// Loss and parameter gradient for one utterance.
pub fn example_loss_and_grad(
    ex: &TrainingExample,
    params: &SaccParams,
    pipeline: &FeaturePipeline,
    kind: LossKind,
) -> Result<(f64, SaccParams)> {
    let acts = forward(&ex.features, params)?;
    let lm = log_mel(acts.s.view(), &pipeline.filterbank)?;
    let (loss, d_out) = surrogate_loss(lm.features.view(), ex.target.view(), kind)?;
    let d_s = lm.backward(&pipeline.filterbank, d_out.view());
    let grads = backward(&ex.features, params, &acts, d_s.view())?;
    Ok((loss, grads.params))
}

pub fn example_loss(
    ex: &TrainingExample,
    params: &SaccParams,
    pipeline: &FeaturePipeline,
    kind: LossKind,
) -> Result<f64> {
    let acts = forward(&ex.features, params)?;
    let lm = log_mel(acts.s.view(), &pipeline.filterbank)?;
    Ok(surrogate_loss(lm.features.view(), ex.target.view(), kind)?.0)
}

/// Frame-weighted mean loss over `examples`, reduced in a fixed order.
pub fn dataset_loss(
    examples: &[&TrainingExample],
    params: &SaccParams,
    pipeline: &FeaturePipeline,
    kind: LossKind,
) -> Result<f64> {
    let losses = examples
        .par_iter()
        .map(|ex| example_loss(ex, params, pipeline, kind).map(|l| (l, ex.frames())))
        .collect::<Result<Vec<_>>>()?;
    let frames: usize = losses.iter().map(|x| x.1).sum();
    Ok(losses.iter().map(|(l, n)| l * *n as f64).sum::<f64>() / frames.max(1) as f64)
}

fn batch_loss_and_grad(
    batch: &[&TrainingExample],
    params: &SaccParams,
    pipeline: &FeaturePipeline,
    kind: LossKind,
) -> Result<(f64, SaccParams)> {
    let parts = batch
        .par_iter()
        .map(|ex| example_loss_and_grad(ex, params, pipeline, kind).map(|(l, g)| (l, g, ex.frames())))
        .collect::<Result<Vec<_>>>()?;
    let frames: usize = parts.iter().map(|p| p.2).sum();
    let mut grad = SaccParams::zeros(params.num_bins(), params.dim());
    let mut loss = 0.0;
    for (l, g, n) in &parts {
        let w = *n as f64 / frames as f64;
        loss += w * l;
        grad.add_scaled(g, w);
    }
    Ok((loss, grad))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed-stable membership of a scene in the held-out split.
pub fn is_validation(scene_id: &str, seed: u64, fraction: f64) -> bool {
    let h = fnv1a(format!("{seed}:{scene_id}").as_bytes());
    ((h % 10_000) as f64) < fraction * 10_000.0
}

/// Trains from prepared examples. Returns the parameters of the best
/// monitored epoch.
pub fn train_examples(
    examples: &[TrainingExample],
    cfg: &TrainConfig,
    init: &SaccParams,
    pipeline: &FeaturePipeline,
) -> Result<(SaccParams, TrainReport)> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::contract("training needs at least one utterance"));
    }
    if init.num_bins() != pipeline.num_bins() {
        return Err(Error::contract(format!(
            "parameters expect {} bins, features have {}",
            init.num_bins(),
            pipeline.num_bins()
        )));
    }
    let (mut val, mut tr): (Vec<&TrainingExample>, Vec<&TrainingExample>) = examples
        .iter()
        .partition(|ex| is_validation(&ex.id, cfg.seed, cfg.validation_fraction));
    if tr.is_empty() {
        std::mem::swap(&mut tr, &mut val);
    }
    let monitored = if val.is_empty() { "training" } else { "validation" };

    let mut params = init.clone();
    let mut opt = Adam::new(cfg.lr, &params);
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::new();
    let mut step_losses = Vec::new();
    let mut stale = 0;
    let mut stopped_early = false;
    let step_cap = cfg.max_steps.unwrap_or(usize::MAX);

    'outer: for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..tr.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let mut epoch_losses = Vec::new();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if step_losses.len() >= step_cap {
                break;
            }
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| tr[i]).collect();
            let (loss, grad) = match batch_loss_and_grad(&batch, &params, pipeline, cfg.loss) {
                Ok(v) => v,
                // Inputs were validated before the first step, so a failure
                // after parameters moved means they left the finite range.
                Err(Error::Contract(_)) if !step_losses.is_empty() => {
                    return Err(Error::Divergence { epoch, batch: b, loss: f64::NAN });
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            step_losses.push(loss);
            epoch_losses.push(loss);
            opt.step(&mut params, &grad);
        }
        if epoch_losses.is_empty() {
            break;
        }
        let monitor_set = if val.is_empty() { &tr } else { &val };
        let monitor_loss = match dataset_loss(monitor_set, &params, pipeline, cfg.loss) {
            Ok(l) => l,
            Err(Error::Contract(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        if !monitor_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: epoch_losses.len(),
                loss: monitor_loss,
            });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64,
            monitor_loss,
        });
        if monitor_loss < best_loss {
            best_loss = monitor_loss;
            best_epoch = epoch;
            best = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                stopped_early = true;
                break 'outer;
            }
        }
        if step_losses.len() >= step_cap {
            break;
        }
    }

    let report = TrainReport {
        epochs,
        step_losses,
        best_epoch,
        best_loss,
        monitored: monitored.into(),
        stopped_early,
        train_ids: tr.iter().map(|e| e.id.clone()).collect(),
        validation_ids: val.iter().map(|e| e.id.clone()).collect(),
        checkpoint_path: None,
    };
    Ok((best, report))
}

/// Loads the manifest's utterances, trains, and optionally writes the best
/// checkpoint.
pub fn train(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    init: &SaccParams,
    pipeline: &FeaturePipeline,
    checkpoint: Option<&Path>,
) -> Result<(SaccParams, TrainReport)> {
    cfg.validate()?;
    if manifest.is_empty() {
        return Err(Error::contract("training manifest is empty"));
    }
    let examples = manifest
        .entries
        .par_iter()
        .map(|e| prepare_example(e, pipeline, cfg.max_frames))
        .collect::<Result<Vec<_>>>()?;
    let (params, mut report) = train_examples(&examples, cfg, init, pipeline)?;
    if let Some(path) = checkpoint {
        save_checkpoint(&params, path)?;
        report.checkpoint_path = Some(path.to_path_buf());
    }
    Ok((params, report))
}
