//! WAV and dataset-manifest I/O.
//!
//! This is the only module that touches the filesystem for audio. Samples are
//! held as `f64` in an `N x C` array with full scale at `1.0`.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time-domain samples, `N x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelWaveform {
    pub samples: Array2<f64>,
    pub sample_rate_hz: u32,
}

impl MultichannelWaveform {
    pub fn new(samples: Array2<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.ncols() == 0 {
            return Err(Error::contract("waveform needs at least one channel"));
        }
        if sample_rate_hz == 0 {
            return Err(Error::contract("sample rate must be positive"));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::contract("waveform contains non-finite samples"));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn mono(samples: Array1<f64>, sample_rate_hz: u32) -> Result<Self> {
        let n = samples.len();
        Self::new(
            samples.into_shape_with_order((n, 1)).expect("contiguous"),
            sample_rate_hz,
        )
    }

    pub fn num_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn num_channels(&self) -> usize {
        self.samples.ncols()
    }

    pub fn channel(&self, c: usize) -> ArrayView1<'_, f64> {
        self.samples.column(c)
    }

    /// Single-channel waveform holding a copy of channel `c`.
    pub fn extract_channel(&self, c: usize) -> MultichannelWaveform {
        let col = self.samples.column(c).to_owned();
        let n = col.len();
        MultichannelWaveform {
            samples: col.into_shape_with_order((n, 1)).expect("contiguous"),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Keeps the first `n` samples (no-op when already shorter).
    pub fn truncate(&mut self, n: usize) {
        if n < self.num_samples() {
            self.samples = self.samples.slice_axis(Axis(0), (0..n).into()).to_owned();
        }
    }

    pub fn require_rate(&self, rate: u32) -> Result<()> {
        if self.sample_rate_hz != rate {
            return Err(Error::Config(format!(
                "expected {rate} Hz audio, got {} Hz (resampling is not supported)",
                self.sample_rate_hz
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Outcome of a write; `clipped` counts PCM16 samples saturated at full scale.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WriteReport {
    pub clipped: usize,
}

const PCM16_SCALE: f64 = 32768.0;

pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelWaveform> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    // Once the file is open, any read failure means a malformed stream.
    let mut reader =
        hound::WavReader::new(BufReader::new(file)).map_err(|e| map_read_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Format {
            path: path.into(),
            reason: "zero channels".into(),
        });
    }
    let flat: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_read_error(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_read_error(path, e))?,
        (fmt, bits) => {
            return Err(Error::Unsupported {
                path: path.into(),
                reason: format!("{bits}-bit {fmt:?}; only PCM16 and float32 are read"),
            })
        }
    };
    if flat.len() % channels != 0 {
        return Err(Error::Format {
            path: path.into(),
            reason: "sample count is not a multiple of the channel count".into(),
        });
    }
    let n = flat.len() / channels;
    let samples = Array2::from_shape_vec((n, channels), flat).expect("shape checked");
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Format {
            path: path.into(),
            reason: "non-finite float samples".into(),
        });
    }
    Ok(MultichannelWaveform {
        samples,
        sample_rate_hz: spec.sample_rate,
    })
}

pub fn write_wav(
    wave: &MultichannelWaveform,
    path: impl AsRef<Path>,
    encoding: WavEncoding,
) -> Result<WriteReport> {
    let path = path.as_ref();
    if wave.samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::contract("cannot write non-finite samples"));
    }
    let channels = u16::try_from(wave.num_channels())
        .map_err(|_| Error::contract("too many channels for WAV"))?;
    let spec = hound::WavSpec {
        channels,
        sample_rate: wave.sample_rate_hz,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    let mut report = WriteReport::default();
    // Row-major iteration interleaves channels frame by frame.
    for &x in wave.samples.iter() {
        match encoding {
            WavEncoding::Pcm16 => {
                let (v, clipped) = to_pcm16(x);
                report.clipped += clipped as usize;
                writer.write_sample(v)
            }
            WavEncoding::Float32 => writer.write_sample(x as f32),
        }
        .map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))?;
    Ok(report)
}

fn to_pcm16(x: f64) -> (i16, bool) {
    let scaled = (x * PCM16_SCALE).round();
    if scaled > i16::MAX as f64 {
        (i16::MAX, true)
    } else if scaled < i16::MIN as f64 {
        (i16::MIN, true)
    } else {
        (scaled as i16, false)
    }
}

fn map_read_error(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(io) => Error::Format {
            path: path.into(),
            reason: io.to_string(),
        },
        other => map_hound(path, other),
    }
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(reason) => Error::Format {
            path: path.into(),
            reason: reason.into(),
        },
        hound::Error::UnfinishedSample => Error::Format {
            path: path.into(),
            reason: "truncated sample data".into(),
        },
        other => Error::Unsupported {
            path: path.into(),
            reason: other.to_string(),
        },
    }
}

/// One line of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub mixture_path: PathBuf,
    pub clean_reference_path: PathBuf,
    pub scene_id: String,
    pub snr_db: f64,
    pub position_id: u32,
    /// Reverberant speech image, all channels, as mixed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speech_component_path: Option<PathBuf>,
    /// Total additive noise, all channels, as mixed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_component_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_azimuth_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t60_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_dbfs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_offsets_db: Option<Vec<f64>>,
}

/// Line-delimited JSON manifest. Relative paths are resolved against the
/// manifest's own directory on load.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        let mut ids = HashSet::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut entry: ManifestEntry =
                serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: path.into(),
                    reason: format!("line {}: {e}", lineno + 1),
                })?;
            if !ids.insert(entry.scene_id.clone()) {
                return Err(Error::Parse {
                    path: path.into(),
                    reason: format!("duplicate scene_id {:?}", entry.scene_id),
                });
            }
            entry.mixture_path = resolve(&base, &entry.mixture_path);
            entry.clean_reference_path = resolve(&base, &entry.clean_reference_path);
            entry.speech_component_path = entry.speech_component_path.map(|p| resolve(&base, &p));
            entry.noise_component_path = entry.noise_component_path.map(|p| resolve(&base, &p));
            for p in [&entry.mixture_path, &entry.clean_reference_path]
                .into_iter()
                .chain(entry.speech_component_path.iter())
                .chain(entry.noise_component_path.iter())
            {
                if !p.exists() {
                    return Err(Error::io(
                        p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file missing"),
                    ));
                }
            }
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for entry in &self.entries {
            let line = serde_json::to_string(entry).expect("manifest entries serialize");
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn pcm16_header_readback() {
        let dir = tmp();
        let p = dir.path().join("a.wav");
        let w = MultichannelWaveform::new(Array2::zeros((160, 2)), 16000).unwrap();
        write_wav(&w, &p, WavEncoding::Pcm16).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.num_samples(), 160);
        assert_eq!(r.num_channels(), 2);
        assert_eq!(r.sample_rate_hz, 16000);
        assert!(r.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn full_scale_pcm_code_scales_by_32768() {
        let dir = tmp();
        let p = dir.path().join("max.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for _ in 0..10 {
            w.write_sample(0x7FFFi16).unwrap();
        }
        w.finalize().unwrap();
        let r = read_wav(&p).unwrap();
        assert!(r.samples.iter().all(|&x| x == 32767.0 / 32768.0));
    }

    #[test]
    fn pcm16_saturates_and_counts() {
        let dir = tmp();
        let p = dir.path().join("clip.wav");
        let w = MultichannelWaveform::new(
            Array2::from_shape_vec((3, 1), vec![1.5, 0.25, -0.5]).unwrap(),
            16000,
        )
        .unwrap();
        let report = write_wav(&w, &p, WavEncoding::Pcm16).unwrap();
        assert_eq!(report.clipped, 1);
        let r = read_wav(&p).unwrap();
        assert_eq!(r.samples[[0, 0]], 32767.0 / 32768.0);
        assert_eq!(r.samples[[1, 0]], 0.25);
        assert_eq!(r.samples[[2, 0]], -0.5);
    }

    #[test]
    fn rejects_garbage_and_unsupported() {
        let dir = tmp();
        let bad = dir.path().join("bad.wav");
        fs::write(&bad, b"RIFF\x10\x00\x00\x00WAVEjunkjunk").unwrap();
        let err = read_wav(&bad);
        assert!(matches!(err, Err(Error::Format { .. })), "{err:?}");

        let p24 = dir.path().join("p24.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p24, spec).unwrap();
        w.write_sample(5i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&p24), Err(Error::Unsupported { .. })));

        assert!(matches!(
            read_wav(dir.path().join("missing.wav")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn manifest_round_trip_and_validation() {
        let dir = tmp();
        let wave = MultichannelWaveform::new(Array2::zeros((10, 1)), 16000).unwrap();
        write_wav(&wave, dir.path().join("m.wav"), WavEncoding::Float32).unwrap();
        write_wav(&wave, dir.path().join("c.wav"), WavEncoding::Float32).unwrap();
        let entry = ManifestEntry {
            mixture_path: "m.wav".into(),
            clean_reference_path: "c.wav".into(),
            scene_id: "s0".into(),
            snr_db: 10.0,
            position_id: 2,
            speech_component_path: None,
            noise_component_path: None,
            source_azimuth_deg: None,
            t60_s: None,
            level_dbfs: None,
            gain_offsets_db: None,
        };
        let m = DatasetManifest {
            entries: vec![entry.clone()],
        };
        let mp = dir.path().join("manifest.jsonl");
        m.save(&mp).unwrap();
        let loaded = DatasetManifest::load(&mp).unwrap();
        assert_eq!(loaded.entries[0].mixture_path, dir.path().join("m.wav"));
        assert_eq!(loaded.entries[0].snr_db, 10.0);

        let dup = DatasetManifest {
            entries: vec![entry.clone(), entry.clone()],
        };
        dup.save(&mp).unwrap();
        assert!(matches!(DatasetManifest::load(&mp), Err(Error::Parse { .. })));

        let mut missing = entry;
        missing.mixture_path = "nope.wav".into();
        DatasetManifest {
            entries: vec![missing],
        }
        .save(&mp)
        .unwrap();
        assert!(matches!(DatasetManifest::load(&mp), Err(Error::Io { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn float32_round_trip_is_exact(
            channels in 1usize..5,
            data in proptest::collection::vec(-4.0f32..4.0, 1..200),
        ) {
            let n = data.len() / channels;
            prop_assume!(n > 0);
            let vals: Vec<f64> = data[..n * channels].iter().map(|&x| x as f64).collect();
            let w = MultichannelWaveform::new(
                Array2::from_shape_vec((n, channels), vals).unwrap(), 16000).unwrap();
            let dir = tmp();
            let p = dir.path().join("rt.wav");
            write_wav(&w, &p, WavEncoding::Float32).unwrap();
            let r = read_wav(&p).unwrap();
            prop_assert_eq!(r, w);
        }
    }
}
