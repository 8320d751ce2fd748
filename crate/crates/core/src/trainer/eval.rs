use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio_io::{read_wav, DatasetManifest, ManifestEntry, MultichannelWaveform};
use crate::beamformers::{
    apply_beamformer, delay_and_sum, mvdr_cdr, select_channel_index, ula_steering_delays, ChannelPolicy,
    MvdrConfig, Stage, SPEED_OF_SOUND,
};
use crate::combinator::{forward, SaccParams};
use crate::error::{Error, Result};
use crate::room_sim::MIC_SPACING_M;
use crate::spectral::{stft, FeaturePipeline, Spectrogram};

#[derive(Debug, Clone, PartialEq)]
pub enum Frontend {
    Sacc { label: String, params: SaccParams },
    Mvdr,
    Das,
    Sdm,
    Rdm { seed: u64 },
    /// The clean reference itself; a zero-distortion sanity row.
    CleanRef,
}

impl Frontend {
    pub fn name(&self) -> String {
        match self {
            Frontend::Sacc { label, .. } => label.clone(),
            Frontend::Mvdr => "mvdr".into(),
            Frontend::Das => "das".into(),
            Frontend::Sdm => "sdm".into(),
            Frontend::Rdm { .. } => "rdm".into(),
            Frontend::CleanRef => "clean_ref".into(),
        }
    }

    /// Trainable parameters.
    pub fn param_count(&self) -> usize {
        match self {
            Frontend::Sacc { params, .. } => params.param_count(),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalOptions {
    /// Evaluate only the first `max_frames` frames of each utterance.
    pub max_frames: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionSummary {
    pub utterances: usize,
    pub distortion_db: f64,
    pub snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub frontend: String,
    pub params: usize,
    pub utterances: usize,
    /// Mean log-Mel distortion against the clean reference.
    pub distortion_db: f64,
    /// Mean output SNR, when speech and noise components are available.
    pub snr_db: Option<f64>,
    pub per_position: BTreeMap<u32, PositionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub scene_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
    pub skipped: Vec<SkippedEntry>,
}

impl EvalTable {
    pub fn row(&self, frontend: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.frontend == frontend)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    /// One line per frontend with per-position distortion columns.
    pub fn to_csv(&self) -> String {
        let positions: Vec<u32> = self
            .rows
            .iter()
            .flat_map(|r| r.per_position.keys().copied())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut out = String::from("frontend,params,utterances,distortion_db,snr_db");
        for p in &positions {
            let _ = write!(out, ",pos{p}_distortion_db,pos{p}_snr_db");
        }
        out.push('\n');
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{:.6},{}",
                r.frontend,
                r.params,
                r.utterances,
                r.distortion_db,
                opt(r.snr_db)
            );
            for p in &positions {
                match r.per_position.get(p) {
                    Some(s) => {
                        let _ = write!(out, ",{:.6},{}", s.distortion_db, opt(s.snr_db));
                    }
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// RMS difference of per-band mean-normalized log-Mel energies (dB).
/// Removing each band's utterance mean makes the measure insensitive to
/// fixed gains and channel coloration.
pub fn log_mel_distortion_db(
    output_mag: &Array2<f64>,
    reference_mag: &Array2<f64>,
    pipeline: &FeaturePipeline,
) -> Result<f64> {
    if output_mag.dim() != reference_mag.dim() {
        return Err(Error::contract(format!(
            "distortion inputs differ in shape: {:?} vs {:?}",
            output_mag.dim(),
            reference_mag.dim()
        )));
    }
    let centre = |m: &Array2<f64>| {
        let mut e = pipeline.mel_energies_db(m.view());
        let mean = e.mean_axis(Axis(0)).expect("at least one frame");
        e -= &mean;
        e
    };
    let d = centre(output_mag) - centre(reference_mag);
    Ok((d.mapv(|v| v * v).sum() / d.len().max(1) as f64).sqrt())
}

fn power_ratio_db(speech: f64, noise: f64) -> f64 {
    10.0 * (speech / noise).log10()
}

fn complex_power(x: &Array2<Complex64>) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum()
}

struct Utterance {
    entry: ManifestEntry,
    mixture: Spectrogram,
    clean_mag: Array2<f64>,
    components: Option<(Spectrogram, Spectrogram)>,
    mixture_wave: MultichannelWaveform,
}

fn load_truncated(path: &std::path::Path, pipeline: &FeaturePipeline, opts: &EvalOptions) -> Result<MultichannelWaveform> {
    let mut w = read_wav(path)?;
    w.require_rate(pipeline.stft.sample_rate_hz)?;
    if let Some(m) = opts.max_frames {
        let n = pipeline.stft.samples_for_frames(m);
        if w.num_samples() > n {
            w.truncate(n);
        }
    }
    Ok(w)
}

fn load_utterance(entry: &ManifestEntry, pipeline: &FeaturePipeline, opts: &EvalOptions) -> Result<std::result::Result<Utterance, String>> {
    let clean = match load_truncated(&entry.clean_reference_path, pipeline, opts) {
        Ok(c) => c,
        Err(e @ (Error::Io { .. } | Error::Format { .. } | Error::Unsupported { .. })) => {
            return Ok(Err(format!("clean reference unavailable: {e}")))
        }
        Err(e) => return Err(e),
    };
    let mixture_wave = load_truncated(&entry.mixture_path, pipeline, opts)?;
    if clean.num_samples() != mixture_wave.num_samples() {
        return Ok(Err("clean reference and mixture lengths differ".into()));
    }
    let mixture = stft(&mixture_wave, &pipeline.stft)?;
    let clean_mag = stft(&clean.extract_channel(0), &pipeline.stft)?
        .magnitude()
        .index_axis_move(Axis(1), 0);
    let components = match (&entry.speech_component_path, &entry.noise_component_path) {
        (Some(s), Some(n)) => {
            let s = stft(&load_truncated(s, pipeline, opts)?, &pipeline.stft)?;
            let n = stft(&load_truncated(n, pipeline, opts)?, &pipeline.stft)?;
            Some((s, n))
        }
        _ => None,
    };
    Ok(Ok(Utterance {
        entry: entry.clone(),
        mixture,
        clean_mag,
        components,
        mixture_wave,
    }))
}

/// Output magnitude and optional output SNR of one frontend on one utterance.
fn run_frontend(
    frontend: &Frontend,
    u: &Utterance,
    pipeline: &FeaturePipeline,
) -> Result<(Array2<f64>, Option<f64>)> {
    let c = u.mixture.num_channels();
    let linear = |apply: &dyn Fn(&Spectrogram) -> Result<Array2<Complex64>>| -> Result<(Array2<f64>, Option<f64>)> {
        let out = apply(&u.mixture)?.mapv(|z| z.norm());
        let snr = match &u.components {
            Some((s, n)) => Some(power_ratio_db(complex_power(&apply(s)?), complex_power(&apply(n)?))),
            None => None,
        };
        Ok((out, snr))
    };
    match frontend {
        Frontend::CleanRef => Ok((u.clean_mag.clone(), None)),
        Frontend::Sdm | Frontend::Rdm { .. } => {
            let policy = match frontend {
                Frontend::Rdm { seed } => ChannelPolicy::Rdm { seed: *seed },
                _ => ChannelPolicy::Sdm,
            };
            let idx = select_channel_index(c, policy, &u.entry.scene_id, Stage::Test);
            linear(&|s: &Spectrogram| Ok(s.bins.index_axis(Axis(1), idx).to_owned()))
        }
        Frontend::Das => {
            let azimuth = u.entry.source_azimuth_deg.unwrap_or(90.0);
            let delays = ula_steering_delays(c, MIC_SPACING_M, azimuth, SPEED_OF_SOUND);
            linear(&|s: &Spectrogram| delay_and_sum(s, &delays, &pipeline.stft))
        }
        Frontend::Mvdr => {
            let cfg = MvdrConfig::for_ula(c, MIC_SPACING_M);
            let (weights, _) = mvdr_cdr(&u.mixture, &pipeline.stft, &cfg)?;
            linear(&|s: &Spectrogram| apply_beamformer(s, &weights))
        }
        Frontend::Sacc { params, .. } => {
            let feats = pipeline.magnitude_features(&u.mixture_wave)?;
            let acts = forward(&feats, params)?;
            let snr = match &u.components {
                Some((s, n)) => {
                    let combine = |spec: &Spectrogram| -> f64 {
                        let mag = spec.magnitude();
                        let (t_len, c_len, f_len) = mag.dim();
                        let mut total = 0.0;
                        for t in 0..t_len {
                            for f in 0..f_len {
                                let v: f64 = (0..c_len).map(|ci| acts.w[[t, ci]] * mag[[t, ci, f]]).sum();
                                total += v * v;
                            }
                        }
                        total
                    };
                    Some(power_ratio_db(combine(s), combine(n)))
                }
                None => None,
            };
            Ok((acts.s, snr))
        }
    }
}

#[derive(Default)]
struct Accum {
    n: usize,
    dist: f64,
    snr_n: usize,
    snr: f64,
}

impl Accum {
    fn add(&mut self, dist: f64, snr: Option<f64>) {
        self.n += 1;
        self.dist += dist;
        if let Some(s) = snr {
            self.snr_n += 1;
            self.snr += s;
        }
    }

    fn mean_dist(&self) -> f64 {
        self.dist / self.n.max(1) as f64
    }

    fn mean_snr(&self) -> Option<f64> {
        (self.snr_n > 0).then(|| self.snr / self.snr_n as f64)
    }
}

/// Runs every frontend on every manifest entry. Entries whose clean
/// reference cannot be read are skipped and listed in the table.
pub fn evaluate(
    manifest: &DatasetManifest,
    frontends: &[Frontend],
    pipeline: &FeaturePipeline,
    opts: &EvalOptions,
) -> Result<EvalTable> {
    for f in frontends {
        if let Frontend::Sacc { params, .. } = f {
            if params.num_bins() != pipeline.num_bins() {
                return Err(Error::contract(format!(
                    "{} expects {} bins, features have {}",
                    f.name(),
                    params.num_bins(),
                    pipeline.num_bins()
                )));
            }
        }
    }
    let results = manifest
        .entries
        .par_iter()
        .map(|entry| -> Result<std::result::Result<(u32, Vec<(f64, Option<f64>)>), SkippedEntry>> {
            let u = match load_utterance(entry, pipeline, opts)? {
                Ok(u) => u,
                Err(reason) => {
                    return Ok(Err(SkippedEntry {
                        scene_id: entry.scene_id.clone(),
                        reason,
                    }))
                }
            };
            let mut out = Vec::with_capacity(frontends.len());
            for f in frontends {
                let (mag, snr) = run_frontend(f, &u, pipeline)?;
                out.push((log_mel_distortion_db(&mag, &u.clean_mag, pipeline)?, snr));
            }
            Ok(Ok((entry.position_id, out)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut totals: Vec<Accum> = frontends.iter().map(|_| Accum::default()).collect();
    let mut by_pos: Vec<BTreeMap<u32, Accum>> = frontends.iter().map(|_| BTreeMap::new()).collect();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok((pos, vals)) => {
                for (i, (d, s)) in vals.into_iter().enumerate() {
                    totals[i].add(d, s);
                    by_pos[i].entry(pos).or_default().add(d, s);
                }
            }
            Err(s) => skipped.push(s),
        }
    }
    let rows = frontends
        .iter()
        .zip(totals.iter().zip(&by_pos))
        .map(|(f, (t, p))| EvalRow {
            frontend: f.name(),
            params: f.param_count(),
            utterances: t.n,
            distortion_db: t.mean_dist(),
            snr_db: t.mean_snr(),
            per_position: p
                .iter()
                .map(|(&k, a)| {
                    (
                        k,
                        PositionSummary {
                            utterances: a.n,
                            distortion_db: a.mean_dist(),
                            snr_db: a.mean_snr(),
                        },
                    )
                })
                .collect(),
        })
        .collect();
    Ok(EvalTable { rows, skipped })
}
