//! Baseline frontends: MVDR with a CDR-derived speech mask, delay-and-sum,
//! and single-microphone channel selection.

mod cdr;
mod das;
mod mvdr;
mod selection;

pub use cdr::{diffuse_coherence, estimate_cdr_mask, estimate_cdr_mask_with, CdrConfig, CdrMask};
pub use das::{delay_and_sum, ula_steering_delays};
pub use mvdr::{
    apply_beamformer, estimate_covariances, mvdr_cdr, mvdr_weights, BeamformerWeights,
    CovariancePair, MvdrConfig, ReferenceSelector, DIAGONAL_LOADING,
};
pub use selection::{middle_channel, select_channel, select_channel_index, ChannelPolicy, Stage};

/// Speed of sound used for all array geometry, m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;
