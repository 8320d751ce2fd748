use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio_io::MultichannelWaveform;

/// Single-microphone baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "policy")]
pub enum ChannelPolicy {
    /// Always the middle microphone.
    Sdm,
    /// A uniformly drawn microphone per training utterance.
    Rdm { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Train,
    Test,
}

/// Index of the middle microphone: 3 for the 8-mic array.
pub fn middle_channel(channels: usize) -> usize {
    channels.saturating_sub(1) / 2
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn select_channel_index(
    channels: usize,
    policy: ChannelPolicy,
    utterance_id: &str,
    stage: Stage,
) -> usize {
    match (policy, stage) {
        (ChannelPolicy::Sdm, _) | (ChannelPolicy::Rdm { .. }, Stage::Test) => middle_channel(channels),
        (ChannelPolicy::Rdm { seed }, Stage::Train) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(utterance_id.as_bytes()));
            rng.random_range(0..channels)
        }
    }
}

pub fn select_channel(
    wave: &MultichannelWaveform,
    policy: ChannelPolicy,
    utterance_id: &str,
    stage: Stage,
) -> MultichannelWaveform {
    let idx = select_channel_index(wave.num_channels(), policy, utterance_id, stage);
    let col = wave.samples.column(idx).to_owned();
    let n = col.len();
    MultichannelWaveform {
        samples: Array2::from_shape_vec((n, 1), col.to_vec()).expect("column"),
        sample_rate_hz: wave.sample_rate_hz,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sdm_picks_fourth_mic() {
        let wave = MultichannelWaveform::new(
            Array2::from_shape_fn((4, 8), |(_, c)| c as f64),
            16000,
        )
        .unwrap();
        let out = select_channel(&wave, ChannelPolicy::Sdm, "u", Stage::Train);
        assert!(out.samples.iter().all(|&x| x == 3.0));
    }

    #[test]
    fn rdm_is_reproducible_and_middle_at_test() {
        let p = ChannelPolicy::Rdm { seed: 17 };
        let a: Vec<usize> = (0..50)
            .map(|i| select_channel_index(8, p, &format!("utt{i}"), Stage::Train))
            .collect();
        let b: Vec<usize> = (0..50)
            .map(|i| select_channel_index(8, p, &format!("utt{i}"), Stage::Train))
            .collect();
        assert_eq!(a, b);
        assert!(a.iter().any(|&c| c != 3));
        assert!((0..50).all(|i| select_channel_index(8, p, &format!("utt{i}"), Stage::Test) == 3));
    }
}
