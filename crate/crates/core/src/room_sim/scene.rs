use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beamformers::SPEED_OF_SOUND;
use crate::error::{Error, Result};

pub const NUM_MICS: usize = 8;
pub const MIC_SPACING_M: f64 = 0.033;
pub const T60_RANGE_S: [f64; 2] = [0.27, 0.79];
const MAX_ATTEMPTS: usize = 100;

/// Sampling ranges for room geometry. Every `[lo, hi]` pair is drawn
/// uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoomProfile {
    pub length_m: [f64; 2],
    pub width_m: [f64; 2],
    pub height_m: [f64; 2],
    pub t60_s: [f64; 2],
    pub wall_margin_m: f64,
    pub array_height_m: [f64; 2],
    pub source_height_m: [f64; 2],
    /// Horizontal source distance from the array centre.
    pub source_distance_m: [f64; 2],
}

impl Default for RoomProfile {
    fn default() -> Self {
        Self {
            length_m: [4.0, 8.0],
            width_m: [3.5, 6.0],
            height_m: [2.5, 3.5],
            t60_s: T60_RANGE_S,
            wall_margin_m: 0.1,
            array_height_m: [0.9, 1.5],
            source_height_m: [1.2, 1.8],
            source_distance_m: [0.8, 3.0],
        }
    }
}

impl RoomProfile {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("length_m", self.length_m),
            ("width_m", self.width_m),
            ("height_m", self.height_m),
            ("t60_s", self.t60_s),
            ("array_height_m", self.array_height_m),
            ("source_height_m", self.source_height_m),
            ("source_distance_m", self.source_distance_m),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
                return Err(Error::Config(format!("{name} must be a positive range, got [{lo}, {hi}]")));
            }
        }
        if self.t60_s[0] < T60_RANGE_S[0] || self.t60_s[1] > T60_RANGE_S[1] {
            return Err(Error::Config(format!(
                "t60_s must lie within [{}, {}] s",
                T60_RANGE_S[0], T60_RANGE_S[1]
            )));
        }
        if !(self.wall_margin_m >= 0.1) {
            return Err(Error::Config("wall_margin_m must be at least 0.1 m".into()));
        }
        Ok(())
    }
}

/// One room with an 8-mic ULA and a single omnidirectional source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub room_dims_m: [f64; 3],
    pub t60_s: f64,
    pub array_center_m: [f64; 3],
    /// Unit vector along the array, horizontal.
    pub array_axis: [f64; 3],
    pub source_pos_m: [f64; 3],
    pub seed: u64,
}

impl SceneSpec {
    pub fn mic_positions(&self) -> Vec<[f64; 3]> {
        let centre = (NUM_MICS as f64 - 1.0) / 2.0;
        (0..NUM_MICS)
            .map(|c| {
                let off = (c as f64 - centre) * MIC_SPACING_M;
                std::array::from_fn(|i| self.array_center_m[i] + off * self.array_axis[i])
            })
            .collect()
    }

    /// Angle between the array axis and the horizontal direction to the
    /// source, in `[0, 180]` degrees.
    pub fn source_azimuth_deg(&self) -> f64 {
        let dx = self.source_pos_m[0] - self.array_center_m[0];
        let dy = self.source_pos_m[1] - self.array_center_m[1];
        let norm = dx.hypot(dy);
        if norm == 0.0 {
            return 90.0;
        }
        let cos = (dx * self.array_axis[0] + dy * self.array_axis[1]) / norm;
        cos.clamp(-1.0, 1.0).acos().to_degrees()
    }

    /// Four 45-degree sectors of source direction relative to the array axis.
    pub fn position_id(&self) -> u32 {
        ((self.source_azimuth_deg() / 45.0).floor() as u32).min(3)
    }

    /// Smallest distance from any mic or the source to any wall.
    pub fn min_wall_margin(&self) -> f64 {
        self.mic_positions()
            .iter()
            .chain(std::iter::once(&self.source_pos_m))
            .flat_map(|p| (0..3).flat_map(move |i| [p[i], self.room_dims_m[i] - p[i]]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn volume(&self) -> f64 {
        self.room_dims_m.iter().product()
    }

    pub fn surface_area(&self) -> f64 {
        let [x, y, z] = self.room_dims_m;
        2.0 * (x * y + x * z + y * z)
    }

    /// Uniform absorption coefficient from Eyring's formula,
    /// `T60 = 24 ln(10) V / (-c S ln(1 - a))`.
    pub fn eyring_absorption(&self) -> Result<f64> {
        let k = 24.0 * 10f64.ln() / SPEED_OF_SOUND;
        let alpha = 1.0 - (-k * self.volume() / (self.surface_area() * self.t60_s)).exp();
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Geometry(format!(
                "absorption {alpha} outside (0, 1] for T60 {} s in a {:?} m room",
                self.t60_s, self.room_dims_m
            )));
        }
        Ok(alpha)
    }

    pub fn validate(&self, wall_margin_m: f64) -> Result<()> {
        if !(T60_RANGE_S[0]..=T60_RANGE_S[1]).contains(&self.t60_s) {
            return Err(Error::Geometry(format!("T60 {} s out of range", self.t60_s)));
        }
        let margin = self.min_wall_margin();
        if margin < wall_margin_m {
            return Err(Error::Geometry(format!(
                "array or source is {margin:.3} m from a wall (need {wall_margin_m} m)"
            )));
        }
        self.eyring_absorption().map(|_| ())
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws a feasible scene by rejection sampling; deterministic per seed.
pub fn sample_scene(seed: u64, profile: &RoomProfile) -> Result<SceneSpec> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_aperture = (NUM_MICS as f64 - 1.0) / 2.0 * MIC_SPACING_M;
    let margin = profile.wall_margin_m;
    for _ in 0..MAX_ATTEMPTS {
        let dims = [
            uniform(&mut rng, profile.length_m),
            uniform(&mut rng, profile.width_m),
            uniform(&mut rng, profile.height_m),
        ];
        let t60 = uniform(&mut rng, profile.t60_s);
        let lo = margin + half_aperture;
        if dims[0] <= 2.0 * lo || dims[1] <= 2.0 * lo {
            continue;
        }
        let center = [
            rng.random_range(lo..dims[0] - lo),
            rng.random_range(lo..dims[1] - lo),
            uniform(&mut rng, profile.array_height_m),
        ];
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let axis = [phi.cos(), phi.sin(), 0.0];
        let dist = uniform(&mut rng, profile.source_distance_m);
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let source = [
            center[0] + dist * theta.cos(),
            center[1] + dist * theta.sin(),
            uniform(&mut rng, profile.source_height_m),
        ];
        let scene = SceneSpec {
            room_dims_m: dims,
            t60_s: t60,
            array_center_m: center,
            array_axis: axis,
            source_pos_m: source,
            seed,
        };
        if scene.validate(margin).is_ok() {
            return Ok(scene);
        }
    }
    Err(Error::Config(format!(
        "no feasible scene after {MAX_ATTEMPTS} attempts (seed {seed})"
    )))
}
