use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{Spectrogram, StftConfig};

/// `Y[t, f] = (1/C) sum_c X[t, c, f] exp(+j 2 pi f_hz tau_c)`.
pub fn delay_and_sum(
    spec: &Spectrogram,
    steering_delay_s: &[f64],
    stft: &StftConfig,
) -> Result<Array2<Complex64>> {
    let (t_len, c, f_len) = spec.bins.dim();
    if steering_delay_s.len() != c {
        return Err(Error::contract(format!(
            "{} steering delays for {c} channels",
            steering_delay_s.len()
        )));
    }
    if steering_delay_s.iter().any(|d| !d.is_finite()) {
        return Err(Error::contract("steering delays must be finite"));
    }
    let phase = Array2::from_shape_fn((f_len, c), |(f, ci)| {
        Complex64::from_polar(1.0, 2.0 * PI * stft.bin_hz(f) * steering_delay_s[ci]) / c as f64
    });
    Ok(Array2::from_shape_fn((t_len, f_len), |(t, f)| {
        (0..c).map(|ci| spec.bins[[t, ci, f]] * phase[[f, ci]]).sum()
    }))
}

/// Far-field arrival delays of a ULA, relative to the array centre, for a
/// source at `azimuth_deg` from the array axis. Mics nearer the source get
/// negative delays.
pub fn ula_steering_delays(
    channels: usize,
    spacing_m: f64,
    azimuth_deg: f64,
    speed_of_sound: f64,
) -> Vec<f64> {
    let centre = (channels as f64 - 1.0) / 2.0;
    let cos = azimuth_deg.to_radians().cos();
    (0..channels)
        .map(|c| -(c as f64 - centre) * spacing_m * cos / speed_of_sound)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn singleton_is_identity() {
        let spec = Spectrogram {
            bins: Array3::from_shape_fn((3, 1, 4), |(t, _, f)| Complex64::new(t as f64, f as f64)),
        };
        let y = delay_and_sum(&spec, &[0.0], &StftConfig::default()).unwrap();
        for t in 0..3 {
            for f in 0..4 {
                assert_eq!(y[[t, f]], spec.bins[[t, 0, f]]);
            }
        }
    }

    #[test]
    fn endfire_delays_span_aperture() {
        let d = ula_steering_delays(8, 0.033, 0.0, 343.0);
        assert!((d[0] - d[7] - 7.0 * 0.033 / 343.0).abs() < 1e-15);
        let broadside = ula_steering_delays(8, 0.033, 90.0, 343.0);
        assert!(broadside.iter().all(|x| x.abs() < 1e-15));
    }
}
