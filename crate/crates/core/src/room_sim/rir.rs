use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::scene::SceneSpec;
use crate::beamformers::SPEED_OF_SOUND;
use crate::error::{Error, Result};

pub const SIM_SAMPLE_RATE_HZ: u32 = 16000;
/// Windowed-sinc half-width for early images (128-tap kernel).
const EARLY_HALF_WIDTH: f64 = 64.0;
/// Half-width used once the reflection density makes the tail noise-like.
const LATE_HALF_WIDTH: f64 = 8.0;
const EARLY_WINDOW_S: f64 = 0.05;
/// Resolution of the energy envelope used for absorption matching.
const ENVELOPE_BIN: usize = 16;

/// How the uniform wall absorption is derived from the scene's T60.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsorptionModel {
    /// Eyring's diffuse-field formula.
    Eyring,
    /// Reflection coefficient solved so the uncapped image model's energy
    /// decay reaches the target T60 (line fit from -5 to -25 dB).
    #[default]
    DecayMatched,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RirOptions {
    /// Cap on wall reflections per image; `None` keeps every image that
    /// arrives within the RIR length.
    pub max_order: Option<usize>,
    pub absorption: AbsorptionModel,
}

impl Default for RirOptions {
    fn default() -> Self {
        Self {
            max_order: None,
            absorption: AbsorptionModel::DecayMatched,
        }
    }
}

impl RirOptions {
    pub fn with_max_order(max_order: usize) -> Self {
        Self {
            max_order: Some(max_order),
            ..Self::default()
        }
    }
}

/// Impulse responses for every mic, `C x L`, at 16 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct RirSet {
    pub rirs: Array2<f64>,
    /// The direct-path component alone, same shape as `rirs`.
    pub direct: Array2<f64>,
    pub sample_rate_hz: u32,
    /// Wall pressure reflection coefficient used for every image.
    pub reflection_coeff: f64,
}

impl RirSet {
    pub fn num_channels(&self) -> usize {
        self.rirs.nrows()
    }

    pub fn len(&self) -> usize {
        self.rirs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.rirs.ncols() == 0
    }
}

/// `ceil(1.2 * T60 * fs)` samples.
pub fn rir_length(t60_s: f64, fs: u32) -> usize {
    (1.2 * t60_s * fs as f64).ceil() as usize
}

/// Adds a Hann-windowed sinc impulse of `amplitude` at fractional sample
/// position `delay`.
fn add_fractional_impulse(out: &mut [f64], delay: f64, amplitude: f64, half_width: f64) {
    let lo = (delay - half_width).ceil().max(0.0) as usize;
    let hi_f = (delay + half_width).floor();
    if hi_f < 0.0 || out.is_empty() {
        return;
    }
    let hi = (hi_f as usize).min(out.len() - 1);
    if lo > hi {
        return;
    }
    // sin(pi x) alternates sign across integer steps; the window phase
    // advances by a fixed rotation.
    let x0 = lo as f64 - delay;
    let sin0 = (PI * x0).sin();
    let (mut wc, mut ws) = ((PI * x0 / half_width).cos(), (PI * x0 / half_width).sin());
    let (rc, rs) = ((PI / half_width).cos(), (PI / half_width).sin());
    let mut sign = 1.0;
    for (k, slot) in out[lo..=hi].iter_mut().enumerate() {
        let x = x0 + k as f64;
        let sinc = if x.abs() < 1e-9 { 1.0 } else { sign * sin0 / (PI * x) };
        *slot += amplitude * 0.5 * (1.0 + wc) * sinc;
        let next = wc * rc - ws * rs;
        ws = ws * rc + wc * rs;
        wc = next;
        sign = -sign;
    }
}

/// Per-axis image coordinates `(position, reflections)` of `src` within
/// `radius` of `rx`.
fn axis_images(src: f64, rx: f64, len: f64, radius: f64, max_order: usize) -> Vec<(f64, usize)> {
    let m_max = (radius / (2.0 * len)).ceil() as i64 + 1;
    let mut out = Vec::new();
    for m in -m_max..=m_max {
        for q in 0..=1i64 {
            let refl = ((m - q).abs() + m.abs()) as usize;
            let pos = (1 - 2 * q) as f64 * src + 2.0 * m as f64 * len;
            if refl <= max_order && (pos - rx).abs() <= radius {
                out.push((pos, refl));
            }
        }
    }
    out
}

/// Calls `visit(image_position, reflections)` for every image within
/// `radius` of `rx` having at most `max_order` reflections.
fn for_each_image(
    scene: &SceneSpec,
    rx: [f64; 3],
    radius: f64,
    max_order: usize,
    mut visit: impl FnMut([f64; 3], usize),
) {
    let src = scene.source_pos_m;
    let dims = scene.room_dims_m;
    let axes: [Vec<(f64, usize)>; 3] =
        std::array::from_fn(|i| axis_images(src[i], rx[i], dims[i], radius, max_order));
    let r2 = radius * radius;
    for &(ix, ox) in &axes[0] {
        let dx2 = (ix - rx[0]).powi(2);
        for &(iy, oy) in &axes[1] {
            let dxy2 = dx2 + (iy - rx[1]).powi(2);
            if dxy2 > r2 || ox + oy > max_order {
                continue;
            }
            for &(iz, oz) in &axes[2] {
                let order = ox + oy + oz;
                if order > max_order || dxy2 + (iz - rx[2]).powi(2) > r2 {
                    continue;
                }
                visit([ix, iy, iz], order);
            }
        }
    }
}

/// Allen & Berkley's 100 Hz high-pass, removing the DC build-up of the
/// all-positive image sum.
pub fn allen_berkley_highpass(x: &mut [f64], fs: f64) {
    let w = 2.0 * PI * 100.0 / fs;
    let r1 = (-w).exp();
    let b1 = 2.0 * r1 * w.cos();
    let b2 = -r1 * r1;
    let a1 = -(1.0 + r1);
    let mut y = [0.0f64; 3];
    for v in x.iter_mut() {
        y[2] = y[1];
        y[1] = y[0];
        y[0] = b1 * y[1] + b2 * y[2] + *v;
        *v = y[0] + a1 * y[1] + r1 * y[2];
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

/// T60 extrapolated from the -5 to -25 dB span of a backward-integrated
/// energy curve sampled every `dt` seconds; `None` if the curve never
/// reaches -25 dB.
fn decay_t60(energy: &[f64], dt: f64) -> Option<f64> {
    let mut edc = vec![0.0; energy.len()];
    let mut acc = 0.0;
    for i in (0..energy.len()).rev() {
        acc += energy[i];
        edc[i] = acc;
    }
    let total = *edc.first()?;
    if total <= 0.0 {
        return None;
    }
    let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / total).log10()).collect();
    let start = db.iter().position(|&d| d <= -5.0)?;
    let stop = db.iter().position(|&d| d <= -25.0)?;
    if stop <= start {
        return Some(0.0);
    }
    let n = (stop - start + 1) as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (i, &d) in db.iter().enumerate().take(stop + 1).skip(start) {
        let x = i as f64 * dt;
        sx += x;
        sy += d;
        sxx += x * x;
        sxy += x * d;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    (slope < 0.0).then(|| -60.0 / slope)
}

/// Reflection coefficient for which the image model's energy envelope at the
/// array centre decays with the scene's T60.
fn decay_matched_beta(scene: &SceneSpec, len: usize) -> Result<f64> {
    let fs = SIM_SAMPLE_RATE_HZ as f64;
    let rx = scene.array_center_m;
    let radius = len as f64 / fs * SPEED_OF_SOUND;
    let bins = len.div_ceil(ENVELOPE_BIN);
    // Energy per (time bin, reflection order); polynomial in beta^2.
    let mut by_order: Vec<Vec<f64>> = Vec::new();
    for_each_image(scene, rx, radius, usize::MAX, |pos, order| {
        let d = distance(pos, rx).max(1e-3);
        let bin = (d / SPEED_OF_SOUND * fs) as usize / ENVELOPE_BIN;
        if bin >= bins {
            return;
        }
        if by_order.len() <= order {
            by_order.resize_with(order + 1, || vec![0.0; bins]);
        }
        by_order[order][bin] += 1.0 / (d * d);
    });
    let dt = ENVELOPE_BIN as f64 / fs;
    let t60_for = |beta: f64| -> f64 {
        let b2 = beta * beta;
        let mut energy = vec![0.0; bins];
        let mut w = 1.0;
        for row in &by_order {
            for (e, &v) in energy.iter_mut().zip(row) {
                *e += w * v;
            }
            w *= b2;
        }
        decay_t60(&energy, dt).unwrap_or(f64::INFINITY)
    };
    let target = scene.t60_s;
    let (mut lo, mut hi) = (0.0f64, 1.0f64 - 1e-9);
    if t60_for(hi) < target {
        return Err(Error::Geometry(format!(
            "T60 {target} s unreachable: lossless walls decay faster within the image budget"
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if t60_for(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Image-source RIRs (Allen & Berkley) for a shoebox room with uniform wall
/// absorption.
pub fn image_method_rir(scene: &SceneSpec, opts: &RirOptions) -> Result<RirSet> {
    let eyring = scene.eyring_absorption()?;
    let fs = SIM_SAMPLE_RATE_HZ as f64;
    let len = rir_length(scene.t60_s, SIM_SAMPLE_RATE_HZ);
    if len == 0 {
        return Err(Error::Geometry("T60 gives an empty impulse response".into()));
    }
    let max_order = opts.max_order.unwrap_or(usize::MAX);
    let beta = match opts.absorption {
        AbsorptionModel::Eyring => (1.0 - eyring).sqrt(),
        AbsorptionModel::DecayMatched => decay_matched_beta(scene, len)?,
    };
    let mics = scene.mic_positions();
    let src = scene.source_pos_m;
    let radius = (len as f64 + EARLY_HALF_WIDTH) / fs * SPEED_OF_SOUND;

    let mut rirs = Array2::zeros((mics.len(), len));
    let mut direct = Array2::zeros((mics.len(), len));
    for (c, &mic) in mics.iter().enumerate() {
        let d0 = distance(src, mic);
        let early_end = d0 / SPEED_OF_SOUND * fs + EARLY_WINDOW_S * fs;
        let mut row = vec![0.0; len];
        for_each_image(scene, mic, radius, max_order, |pos, order| {
            let dist = distance(pos, mic);
            let delay = dist / SPEED_OF_SOUND * fs;
            let hw = if delay < early_end { EARLY_HALF_WIDTH } else { LATE_HALF_WIDTH };
            add_fractional_impulse(&mut row, delay, beta.powi(order as i32) / (4.0 * PI * dist), hw);
        });
        allen_berkley_highpass(&mut row, fs);
        rirs.row_mut(c).assign(&ndarray::Array1::from(row));

        let mut drow = vec![0.0; len];
        add_fractional_impulse(
            &mut drow,
            d0 / SPEED_OF_SOUND * fs,
            1.0 / (4.0 * PI * d0),
            EARLY_HALF_WIDTH,
        );
        allen_berkley_highpass(&mut drow, fs);
        direct.row_mut(c).assign(&ndarray::Array1::from(drow));
    }
    Ok(RirSet {
        rirs,
        direct,
        sample_rate_hz: SIM_SAMPLE_RATE_HZ,
        reflection_coeff: beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::room_sim::scene::{sample_scene, RoomProfile};

    #[test]
    fn order_zero_is_direct_path() {
        let scene = sample_scene(3, &RoomProfile::default()).unwrap();
        let set = image_method_rir(&scene, &RirOptions::with_max_order(0)).unwrap();
        assert_eq!(set.rirs, set.direct);
        assert_eq!(set.len(), rir_length(scene.t60_s, 16000));
    }

    #[test]
    fn integer_delay_is_a_single_tap() {
        let mut out = vec![0.0; 200];
        add_fractional_impulse(&mut out, 80.0, 0.5, 64.0);
        assert!((out[80] - 0.5).abs() < 1e-15);
        assert!(out
            .iter()
            .enumerate()
            .all(|(i, &v)| i == 80 || v.abs() < 1e-12));
    }

    #[test]
    fn kernel_matches_direct_evaluation() {
        let mut out = vec![0.0; 200];
        add_fractional_impulse(&mut out, 80.3, 1.0, 64.0);
        for (n, &v) in out.iter().enumerate() {
            let x = n as f64 - 80.3;
            let expect = if x.abs() <= 64.0 {
                0.5 * (1.0 + (PI * x / 64.0).cos()) * (PI * x).sin() / (PI * x)
            } else {
                0.0
            };
            assert!((v - expect).abs() < 1e-12, "{n}: {v} vs {expect}");
        }
    }

    #[test]
    fn eyring_model_uses_formula() {
        let scene = sample_scene(4, &RoomProfile::default()).unwrap();
        let opts = RirOptions {
            max_order: Some(2),
            absorption: AbsorptionModel::Eyring,
        };
        let set = image_method_rir(&scene, &opts).unwrap();
        let alpha = scene.eyring_absorption().unwrap();
        assert!((set.reflection_coeff - (1.0 - alpha).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn image_counts_by_order() {
        let scene = sample_scene(1, &RoomProfile::default()).unwrap();
        let mut counts = [0usize; 3];
        for_each_image(&scene, scene.array_center_m, 1e6, 2, |_, o| counts[o] += 1);
        // 1 direct, 6 first-order walls, 18 second-order images.
        assert_eq!(counts, [1, 6, 18]);
    }
}
