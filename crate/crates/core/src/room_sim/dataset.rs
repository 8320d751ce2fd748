use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mix::{fft_convolve, render_mixture, MixProfile, MixSpec, RenderedMixture};
use super::noise::{synthetic_noise, synthetic_speech, NoisePreset};
use super::rir::{image_method_rir, RirOptions, SIM_SAMPLE_RATE_HZ};
use super::scene::{sample_scene, RoomProfile, SceneSpec};
use crate::audio_io::{read_wav, write_wav, DatasetManifest, ManifestEntry, MultichannelWaveform, WavEncoding};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Simulation settings, loadable from TOML. Every key is optional.
///
/// ```toml
/// utterance_s = [2.0, 3.0]
/// [room]
/// length_m = [4.0, 8.0]
/// t60_s = [0.27, 0.79]
/// [mix]
/// snr_db = [3.0, 25.0]
/// [rir]
/// max_order = 20
/// absorption = "eyring"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationProfile {
    pub room: RoomProfile,
    pub mix: MixProfile,
    pub rir: RirOptions,
    /// Length range of synthetic utterances.
    pub utterance_s: [f64; 2],
    /// Minimum distance between the noise source and the array centre.
    pub noise_min_distance_m: f64,
}

impl Default for SimulationProfile {
    fn default() -> Self {
        Self {
            room: RoomProfile::default(),
            mix: MixProfile::default(),
            rir: RirOptions::default(),
            utterance_s: [2.0, 3.0],
            noise_min_distance_m: 1.0,
        }
    }
}

impl SimulationProfile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let profile: Self = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        self.mix.validate()?;
        let [lo, hi] = self.utterance_s;
        if !(lo >= 0.1 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("utterance_s [{lo}, {hi}] is invalid")));
        }
        if !(self.noise_min_distance_m >= 0.0) {
            return Err(Error::Config("noise_min_distance_m must be non-negative".into()));
        }
        Ok(())
    }
}

/// Where source signals come from. Empty lists select the synthetic fallback.
#[derive(Debug, Clone, Default)]
pub struct SourceCorpus {
    pub speech_files: Vec<PathBuf>,
    pub noise_files: Vec<PathBuf>,
}

impl SourceCorpus {
    pub fn from_dirs(speech_dir: Option<&Path>, noise_dir: Option<&Path>) -> Result<Self> {
        Ok(Self {
            speech_files: speech_dir.map(list_wavs).transpose()?.unwrap_or_default(),
            noise_files: noise_dir.map(list_wavs).transpose()?.unwrap_or_default(),
        })
    }
}

/// `*.wav` files directly inside `dir`, sorted by name.
pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no .wav files"),
        ));
    }
    Ok(files)
}

/// Independent per-scene seed.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SimulatedScene {
    pub scene: SceneSpec,
    pub mix: MixSpec,
    pub rendered: RenderedMixture,
}

fn load_mono(path: &Path) -> Result<Vec<f64>> {
    let wave = read_wav(path)?;
    wave.require_rate(SIM_SAMPLE_RATE_HZ)?;
    Ok(wave.channel(0).to_vec())
}

fn noise_position(rng: &mut ChaCha8Rng, scene: &SceneSpec, min_dist: f64, margin: f64) -> [f64; 3] {
    let d = scene.room_dims_m;
    let mut best = scene.source_pos_m;
    let mut best_dist = -1.0;
    for _ in 0..100 {
        let p: [f64; 3] = std::array::from_fn(|i| rng.random_range(margin..d[i] - margin));
        let dist = (0..3)
            .map(|i| (p[i] - scene.array_center_m[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        if dist >= min_dist {
            return p;
        }
        if dist > best_dist {
            best = p;
            best_dist = dist;
        }
    }
    best
}

/// Renders one scene end to end; a pure function of `(seed, profile, corpus)`.
pub fn simulate_scene(seed: u64, profile: &SimulationProfile, corpus: &SourceCorpus) -> Result<SimulatedScene> {
    let fs = SIM_SAMPLE_RATE_HZ;
    let scene = sample_scene(seed, &profile.room)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE7_E000_0000_0001);
    let mix = MixSpec::sample(&mut rng, &profile.mix);

    let speech = if corpus.speech_files.is_empty() {
        let [lo, hi] = profile.utterance_s;
        let secs = if hi > lo { rng.random_range(lo..hi) } else { lo };
        synthetic_speech(rng.random(), (secs * fs as f64) as usize, fs)
    } else {
        let pick = rng.random_range(0..corpus.speech_files.len());
        load_mono(&corpus.speech_files[pick])?
    };
    let n = speech.len();

    let noise_src = if corpus.noise_files.is_empty() {
        let mut acc = vec![0.0; n];
        for preset in NoisePreset::ALL {
            let w = 10f64.powf(rng.random_range(-6.0..0.0) / 20.0);
            let x = synthetic_noise(preset, rng.random(), n, fs);
            acc.iter_mut().zip(&x).for_each(|(a, b)| *a += w * b);
        }
        acc
    } else {
        let pick = rng.random_range(0..corpus.noise_files.len());
        load_mono(&corpus.noise_files[pick])?
    };

    let rirs = image_method_rir(&scene, &profile.rir)?;
    let noise_scene = SceneSpec {
        source_pos_m: noise_position(
            &mut rng,
            &scene,
            profile.noise_min_distance_m,
            profile.room.wall_margin_m,
        ),
        ..scene.clone()
    };
    let noise_rirs = image_method_rir(&noise_scene, &profile.rir)?;
    let m = noise_src.len();
    let mut noise = Array2::zeros((m, noise_rirs.num_channels()));
    for c in 0..noise_rirs.num_channels() {
        let y = fft_convolve(&noise_src, &noise_rirs.rirs.row(c).to_vec(), m);
        noise.column_mut(c).assign(&Array1::from(y));
    }
    let noise = MultichannelWaveform::new(noise, fs)?;
    let clean = MultichannelWaveform::mono(Array1::from(speech), fs)?;
    let rendered = render_mixture(&clean, &rirs, &noise, &mix, rng.random())?;
    Ok(SimulatedScene { scene, mix, rendered })
}

/// Simulates `n_scenes` scenes into `out_dir` and writes `manifest.jsonl`.
/// Scenes render in parallel; output is identical for a given seed
/// regardless of thread count.
pub fn build_dataset(
    n_scenes: usize,
    seed: u64,
    profile: &SimulationProfile,
    corpus: &SourceCorpus,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    profile.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries = (0..n_scenes)
        .into_par_iter()
        .map(|i| -> Result<ManifestEntry> {
            let sim = simulate_scene(scene_seed(seed, i), profile, corpus)?;
            let id = format!("scene_{i:05}");
            let names = ["mix", "clean", "speech", "noise"].map(|k| format!("{id}_{k}.wav"));
            let waves = [
                &sim.rendered.mixture,
                &sim.rendered.clean_ref,
                &sim.rendered.speech,
                &sim.rendered.noise,
            ];
            for (name, wave) in names.iter().zip(waves) {
                write_wav(wave, out_dir.join(name), WavEncoding::Float32)?;
            }
            let [mix, clean, speech, noise] = names.map(PathBuf::from);
            Ok(ManifestEntry {
                mixture_path: mix,
                clean_reference_path: clean,
                scene_id: id,
                snr_db: sim.mix.noise_snr_db,
                position_id: sim.scene.position_id(),
                speech_component_path: Some(speech),
                noise_component_path: Some(noise),
                source_azimuth_deg: Some(sim.scene.source_azimuth_deg()),
                t60_s: Some(sim.scene.t60_s),
                level_dbfs: Some(sim.mix.level_dbfs),
                gain_offsets_db: Some(sim.mix.gain_offsets_db.clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    DatasetManifest { entries }.save(&manifest_path)?;
    DatasetManifest::load(&manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_toml_round_trip() {
        let p = SimulationProfile::default();
        let text = toml::to_string(&p).unwrap();
        assert_eq!(toml::from_str::<SimulationProfile>(&text).unwrap(), p);
        let partial: SimulationProfile =
            toml::from_str("[room]\nt60_s = [0.3, 0.4]\n[rir]\nmax_order = 3\n").unwrap();
        assert_eq!(partial.rir.max_order, Some(3));
        assert_eq!(partial.room.t60_s, [0.3, 0.4]);
        assert!(toml::from_str::<SimulationProfile>("bogus = 1").is_err());
    }

    #[test]
    fn scene_seeds_differ() {
        assert_ne!(scene_seed(7, 0), scene_seed(7, 1));
        assert_ne!(scene_seed(7, 0), scene_seed(8, 0));
    }
}
