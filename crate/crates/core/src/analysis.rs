//! Intermediate outputs of the combinator for inspection: normalized
//! per-channel spectrograms, time-averaged attention and smoothed channel
//! weight traces.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use serde::Serialize;

use crate::audio_io::MultichannelWaveform;
use crate::combinator::{forward, SaccParams};
use crate::error::{Error, Result};
use crate::spectral::FeaturePipeline;

pub const SMOOTHING_FRAMES: usize = 30;

/// Centered moving average over `window` frames (offsets `-window/2` to
/// `window - window/2 - 1`); near the edges the mean is taken over the
/// frames that exist.
pub fn moving_average(x: ArrayView1<'_, f64>, window: usize) -> Array1<f64> {
    let n = x.len();
    if window == 0 || n == 0 {
        return x.to_owned();
    }
    let back = window / 2;
    let ahead = window - back - 1;
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    Array1::from_shape_fn(n, |t| {
        let lo = t.saturating_sub(back);
        let hi = (t + ahead).min(n - 1);
        (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
    })
}

/// Mean over frames of a `T x C x C` attention tensor with the diagonal set
/// to zero.
pub fn time_averaged_attention(att: &Array3<f64>) -> Array2<f64> {
    let (_, rows, cols) = att.dim();
    let mut avg = att.mean_axis(Axis(0)).unwrap_or_else(|| Array2::zeros((rows, cols)));
    avg.diag_mut().fill(0.0);
    avg
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisBundle {
    /// `C x T x F`.
    pub norm_logmag_per_channel: Array3<f64>,
    /// `C x C`, zero diagonal.
    pub time_avg_attention: Array2<f64>,
    /// `C x T`, smoothed channel weights.
    pub weight_traces: Array2<f64>,
    /// `C x T`, unsmoothed channel weights.
    pub raw_weights: Array2<f64>,
    pub smoothing_frames: usize,
}

#[derive(Serialize)]
struct BundleJson<'a> {
    channels: usize,
    frames: usize,
    bins: usize,
    smoothing_frames: usize,
    time_avg_attention: Vec<Vec<f64>>,
    weight_traces: Vec<Vec<f64>>,
    raw_weights: Vec<Vec<f64>>,
    norm_logmag_files: &'a [String],
}

fn rows(a: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn csv(a: ArrayView2<'_, f64>) -> String {
    let mut out = String::new();
    for r in a.outer_iter() {
        for (i, v) in r.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:e}");
        }
        out.push('\n');
    }
    out
}

fn write_file(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

impl AnalysisBundle {
    /// Writes `analysis.json`, `attention.csv`, `weight_traces.csv` and one
    /// `norm_logmag_chN.csv` (`T x F`) per channel.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (c, t, f) = self.norm_logmag_per_channel.dim();
        let mut written = Vec::new();
        let mut names = Vec::new();
        for ch in 0..c {
            let name = format!("norm_logmag_ch{ch}.csv");
            written.push(write_file(
                dir.join(&name),
                &csv(self.norm_logmag_per_channel.index_axis(Axis(0), ch)),
            )?);
            names.push(name);
        }
        written.push(write_file(dir.join("attention.csv"), &csv(self.time_avg_attention.view()))?);
        written.push(write_file(dir.join("weight_traces.csv"), &csv(self.weight_traces.view()))?);
        let json = BundleJson {
            channels: c,
            frames: t,
            bins: f,
            smoothing_frames: self.smoothing_frames,
            time_avg_attention: rows(self.time_avg_attention.view()),
            weight_traces: rows(self.weight_traces.view()),
            raw_weights: rows(self.raw_weights.view()),
            norm_logmag_files: &names,
        };
        let text = serde_json::to_string_pretty(&json).expect("bundle serializes");
        written.push(write_file(dir.join("analysis.json"), &text)?);
        Ok(written)
    }
}

/// Runs the combinator on one utterance and collects its intermediate
/// outputs. Needs at least two channels.
pub fn analyze(wave: &MultichannelWaveform, params: &SaccParams, pipeline: &FeaturePipeline) -> Result<AnalysisBundle> {
    if wave.num_channels() < 2 {
        return Err(Error::Config(format!(
            "analysis needs at least 2 channels, input has {}",
            wave.num_channels()
        )));
    }
    let feats = pipeline.magnitude_features(wave)?;
    let acts = forward(&feats, params)?;
    let raw_weights = acts.w.t().to_owned();
    let mut weight_traces = raw_weights.clone();
    for mut row in weight_traces.outer_iter_mut() {
        let smoothed = moving_average(row.view(), SMOOTHING_FRAMES);
        row.assign(&smoothed);
    }
    Ok(AnalysisBundle {
        norm_logmag_per_channel: feats
            .normalized_logmag
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .to_owned(),
        time_avg_attention: time_averaged_attention(&acts.att),
        weight_traces,
        raw_weights,
        smoothing_frames: SMOOTHING_FRAMES,
    })
}
