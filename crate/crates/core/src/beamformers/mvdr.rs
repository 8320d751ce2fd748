use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use num_complex::Complex64;

use super::cdr::{estimate_cdr_mask, CdrMask};
use crate::error::{Error, Result};
use crate::spectral::{Spectrogram, StftConfig};

/// Relative diagonal loading applied to the noise covariance.
pub const DIAGONAL_LOADING: f64 = 1e-6;

/// Per-frequency noise and speech spatial covariances, `F x C x C` each.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePair {
    pub phi_v: Array3<Complex64>,
    pub phi_s: Array3<Complex64>,
    /// Bins whose mask column summed to zero and fell back to the plain
    /// sample covariance for `phi_s`.
    pub fallback_bins: usize,
}

/// Complex combination weights `h`, `F x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerWeights {
    pub h: Array2<Complex64>,
}

/// One-hot reference microphone vector `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceSelector {
    index: usize,
    channels: usize,
}

impl ReferenceSelector {
    pub fn new(index: usize, channels: usize) -> Result<Self> {
        if index >= channels {
            return Err(Error::contract(format!(
                "reference {index} out of range for {channels} channels"
            )));
        }
        Ok(Self { index, channels })
    }

    /// The array's middle microphone (index 3 of 8).
    pub fn middle(channels: usize) -> Self {
        Self {
            index: super::middle_channel(channels),
            channels,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn one_hot(&self) -> Vec<f64> {
        (0..self.channels)
            .map(|c| if c == self.index { 1.0 } else { 0.0 })
            .collect()
    }
}

fn hermitian_part(m: &mut Array2<Complex64>) {
    let sym = (&*m + &m.t().mapv(|z| z.conj())) * Complex64::new(0.5, 0.0);
    *m = sym;
}

fn trace(m: &Array2<Complex64>) -> f64 {
    m.diag().iter().map(|z| z.re).sum()
}

/// Mask-weighted speech covariance and complementary noise covariance.
pub fn estimate_covariances(spec: &Spectrogram, mask: &CdrMask) -> Result<CovariancePair> {
    let (t_len, c, f_len) = spec.bins.dim();
    if mask.mask.dim() != (t_len, f_len) {
        return Err(Error::contract(format!(
            "mask is {:?}, spectrogram needs {:?}",
            mask.mask.dim(),
            (t_len, f_len)
        )));
    }
    let mut phi_s = Array3::zeros((f_len, c, c));
    let mut phi_v = Array3::zeros((f_len, c, c));
    let mut fallback_bins = 0;
    for f in 0..f_len {
        let mut s = Array2::<Complex64>::zeros((c, c));
        let mut v = Array2::<Complex64>::zeros((c, c));
        let mut plain = Array2::<Complex64>::zeros((c, c));
        let (mut ws, mut wv) = (0.0, 0.0);
        for t in 0..t_len {
            let m = mask.mask[[t, f]];
            for i in 0..c {
                let xi = spec.bins[[t, i, f]];
                for j in 0..c {
                    let outer = xi * spec.bins[[t, j, f]].conj();
                    s[[i, j]] += outer * m;
                    v[[i, j]] += outer * (1.0 - m);
                    plain[[i, j]] += outer;
                }
            }
            ws += m;
            wv += 1.0 - m;
        }
        if ws > 0.0 {
            s.mapv_inplace(|z| z / ws);
        } else {
            fallback_bins += 1;
            s = plain.mapv(|z| z / t_len.max(1) as f64);
        }
        if wv > 0.0 {
            v.mapv_inplace(|z| z / wv);
        }
        hermitian_part(&mut s);
        hermitian_part(&mut v);
        // Load relative to the noise power; an all-speech mask leaves phi_v
        // empty, so fall back to the speech power scale.
        let scale = [trace(&v), trace(&s)]
            .into_iter()
            .find(|&x| x > 0.0)
            .unwrap_or(1.0);
        let load = DIAGONAL_LOADING * scale / c as f64;
        for i in 0..c {
            v[[i, i]] += load;
        }
        phi_s.index_axis_mut(ndarray::Axis(0), f).assign(&s);
        phi_v.index_axis_mut(ndarray::Axis(0), f).assign(&v);
    }
    Ok(CovariancePair {
        phi_v,
        phi_s,
        fallback_bins,
    })
}

fn to_dmatrix(a: ndarray::ArrayView2<'_, Complex64>) -> DMatrix<Complex64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

/// `h_f = (phi_v^-1 phi_s u) / tr(phi_v^-1 phi_s)` per bin.
pub fn mvdr_weights(cov: &CovariancePair, reference: &ReferenceSelector) -> Result<BeamformerWeights> {
    let (f_len, c, _) = cov.phi_v.dim();
    if cov.phi_s.dim() != cov.phi_v.dim() {
        return Err(Error::contract("speech and noise covariances differ in shape"));
    }
    if reference.channels != c {
        return Err(Error::contract(format!(
            "reference selector is for {} channels, covariances have {c}",
            reference.channels
        )));
    }
    let mut h = Array2::zeros((f_len, c));
    for f in 0..f_len {
        let phi_v = to_dmatrix(cov.phi_v.index_axis(ndarray::Axis(0), f));
        let phi_s = to_dmatrix(cov.phi_s.index_axis(ndarray::Axis(0), f));
        let numer = phi_v.lu().solve(&phi_s).ok_or_else(|| Error::Numeric {
            bin: f,
            reason: "noise covariance is singular".into(),
        })?;
        let tr = numer.trace();
        if !(tr.norm() > f64::MIN_POSITIVE) {
            return Err(Error::Numeric {
                bin: f,
                reason: "tr(phi_v^-1 phi_s) vanishes".into(),
            });
        }
        for ci in 0..c {
            let z = numer[(ci, reference.index)] / tr;
            if !z.is_finite() {
                return Err(Error::Numeric {
                    bin: f,
                    reason: "non-finite beamformer weight".into(),
                });
            }
            h[[f, ci]] = z;
        }
    }
    Ok(BeamformerWeights { h })
}

/// `Y[t, f] = sum_c X[t, c, f] conj(h[f, c])`.
pub fn apply_beamformer(spec: &Spectrogram, weights: &BeamformerWeights) -> Result<Array2<Complex64>> {
    let (t_len, c, f_len) = spec.bins.dim();
    if weights.h.dim() != (f_len, c) {
        return Err(Error::contract(format!(
            "weights are {:?}, spectrogram needs {:?}",
            weights.h.dim(),
            (f_len, c)
        )));
    }
    let hc = weights.h.mapv(|z| z.conj());
    Ok(Array2::from_shape_fn((t_len, f_len), |(t, f)| {
        (0..c).map(|ci| spec.bins[[t, ci, f]] * hc[[f, ci]]).sum()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvdrConfig {
    /// Mic pair driving the CDR estimate.
    pub cdr_pair: (usize, usize),
    pub spacing_m: f64,
}

impl MvdrConfig {
    /// Adjacent pair around the middle mic of a 33 mm ULA.
    pub fn for_ula(channels: usize, spacing_m: f64) -> Self {
        let mid = super::middle_channel(channels);
        Self {
            cdr_pair: (mid, (mid + 1).min(channels.saturating_sub(1))),
            spacing_m,
        }
    }
}

/// Utterance-level MVDR: CDR mask, covariances, weights for the middle
/// reference mic, then beamforming. Returns the weights and output.
pub fn mvdr_cdr(
    spec: &Spectrogram,
    stft: &StftConfig,
    cfg: &MvdrConfig,
) -> Result<(BeamformerWeights, Array2<Complex64>)> {
    let mask = estimate_cdr_mask(spec, cfg.cdr_pair, cfg.spacing_m, stft)?;
    let cov = estimate_covariances(spec, &mask)?;
    let weights = mvdr_weights(&cov, &ReferenceSelector::middle(spec.num_channels()))?;
    let out = apply_beamformer(spec, &weights)?;
    Ok((weights, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spec(t: usize, c: usize, f: usize, seed: u64) -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Spectrogram {
            bins: Array3::from_shape_fn((t, c, f), |_| {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            }),
        }
    }

    #[test]
    fn all_speech_mask_gives_sample_covariance() {
        let spec = random_spec(6, 3, 4, 1);
        let mask = CdrMask {
            mask: Array2::ones((6, 4)),
        };
        let cov = estimate_covariances(&spec, &mask).unwrap();
        for f in 0..4 {
            for i in 0..3 {
                for j in 0..3 {
                    let expect: Complex64 = (0..6)
                        .map(|t| spec.bins[[t, i, f]] * spec.bins[[t, j, f]].conj())
                        .sum::<Complex64>()
                        / 6.0;
                    assert!((cov.phi_s[[f, i, j]] - expect).norm() < 1e-12);
                    let loaded = if i == j {
                        DIAGONAL_LOADING * trace(&cov.phi_s.index_axis(ndarray::Axis(0), f).to_owned()) / 3.0
                    } else {
                        0.0
                    };
                    assert!((cov.phi_v[[f, i, j]] - loaded).norm() < 1e-15);
                }
            }
        }
        assert_eq!(cov.fallback_bins, 0);
    }

    #[test]
    fn single_frame_is_rank_one() {
        let spec = random_spec(1, 3, 2, 2);
        let mask = CdrMask {
            mask: Array2::ones((1, 2)),
        };
        let cov = estimate_covariances(&spec, &mask).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let outer = spec.bins[[0, i, 0]] * spec.bins[[0, j, 0]].conj();
                assert!((cov.phi_s[[0, i, j]] - outer).norm() < 1e-14);
            }
        }
        // 2x2 minors of a rank-one matrix vanish
        let m = cov.phi_s.index_axis(ndarray::Axis(0), 0);
        let minor = m[[0, 0]] * m[[1, 1]] - m[[0, 1]] * m[[1, 0]];
        assert!(minor.norm() < 1e-12);
    }

    #[test]
    fn zero_mask_column_falls_back() {
        let spec = random_spec(5, 2, 3, 3);
        let mut mask = Array2::from_elem((5, 3), 0.5);
        mask.column_mut(1).fill(0.0);
        let cov = estimate_covariances(&spec, &CdrMask { mask }).unwrap();
        assert_eq!(cov.fallback_bins, 1);
        assert!(cov.phi_s.iter().all(|z| z.is_finite()));
    }

    #[test]
    fn covariances_are_hermitian() {
        let spec = random_spec(20, 4, 6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mask = CdrMask {
            mask: Array2::from_shape_fn((20, 6), |_| rng.random_range(0.0..1.0)),
        };
        let cov = estimate_covariances(&spec, &mask).unwrap();
        for m in [&cov.phi_s, &cov.phi_v] {
            for f in 0..6 {
                for i in 0..4 {
                    for j in 0..4 {
                        assert!((m[[f, i, j]] - m[[f, j, i]].conj()).norm() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn singular_noise_covariance_reports_bin() {
        let mut cov = CovariancePair {
            phi_v: Array3::zeros((2, 2, 2)),
            phi_s: Array3::zeros((2, 2, 2)),
            fallback_bins: 0,
        };
        for f in 0..2 {
            for i in 0..2 {
                cov.phi_s[[f, i, i]] = Complex64::new(1.0, 0.0);
            }
        }
        cov.phi_v[[0, 0, 0]] = Complex64::new(1.0, 0.0);
        cov.phi_v[[0, 1, 1]] = Complex64::new(1.0, 0.0);
        let err = mvdr_weights(&cov, &ReferenceSelector::new(0, 2).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Numeric { bin: 1, .. }), "{err:?}");
    }

    #[test]
    fn one_hot_weights_select_channel() {
        let spec = random_spec(4, 3, 5, 6);
        let mut h = Array2::zeros((5, 3));
        h.column_mut(2).fill(Complex64::new(1.0, 0.0));
        let y = apply_beamformer(&spec, &BeamformerWeights { h: h.clone() }).unwrap();
        for t in 0..4 {
            for f in 0..5 {
                assert_eq!(y[[t, f]], spec.bins[[t, 2, f]]);
            }
        }
        let y2 = apply_beamformer(&spec, &BeamformerWeights { h: h.mapv(|z| z * 2.5) }).unwrap();
        for (a, b) in y2.iter().zip(y.iter()) {
            assert!((a - b * 2.5).norm() < 1e-14);
        }
    }
}
