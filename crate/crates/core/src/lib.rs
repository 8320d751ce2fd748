//! Self-attention channel combinator (SACC) for multichannel far-field
//! speech, with classical beamforming baselines, an image-method room
//! simulator and a small training and evaluation loop.

pub mod analysis;
pub mod audio_io;
pub mod beamformers;
pub mod combinator;
pub mod error;
pub mod room_sim;
pub mod spectral;
pub mod trainer;

pub use analysis::{analyze, AnalysisBundle};
pub use audio_io::{read_wav, write_wav, DatasetManifest, ManifestEntry, MultichannelWaveform};
pub use combinator::{load_checkpoint, save_checkpoint, SaccParams};
pub use error::{Error, Result};
pub use spectral::{FeaturePipeline, MelConfig, StftConfig};
