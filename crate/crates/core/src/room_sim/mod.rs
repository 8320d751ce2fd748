//! Shoebox-room simulation of 8-channel ULA recordings.

mod dataset;
mod mix;
mod noise;
mod rir;
mod scene;

pub use dataset::{
    build_dataset, list_wavs, scene_seed, simulate_scene, SimulatedScene, SimulationProfile, SourceCorpus,
    MANIFEST_FILE,
};
pub use mix::{
    fft_convolve, render_mixture, MixProfile, MixSpec, RenderedMixture, GAIN_OFFSET_RANGE_DB, LEVEL_RANGE_DBFS,
    REFERENCE_MIC, SELF_NOISE_SNR_DB, SNR_RANGE_DB,
};
pub use noise::{synthetic_noise, synthetic_speech, NoisePreset};
pub use rir::{image_method_rir, rir_length, AbsorptionModel, RirOptions, RirSet, SIM_SAMPLE_RATE_HZ};
pub use scene::{sample_scene, RoomProfile, SceneSpec, MIC_SPACING_M, NUM_MICS, T60_RANGE_S};
