//! Self-attention channel combinator.
//!
//! Per frame `t`, with `Z` the `C x F` normalized log magnitudes:
//!
//! ```text
//! query = Z Wq + bq            (C x D)
//! key   = Z Wk + bk            (C x D)
//! value = Z Wv + bv            (C)
//! att   = softmax_rows(query key^T / sqrt(D))
//! w     = softmax(att value)
//! S[f]  = sum_c w[c] mag[c, f]
//! ```
//!
//! The combination in the last line uses the *linear* magnitude, while the
//! projections consume the log + MVN normalized magnitude.

use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayViewMut1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio_io::MultichannelWaveform;
use crate::error::{Error, Result};
use crate::spectral::{
    log_mel, magnitude_and_normalize, stft, LogMel, MagnitudeFeatures, MelFilterbank, StftConfig,
};

/// Attention width used throughout the default configuration.
pub const DEFAULT_ATTENTION_DIM: usize = 256;

/// Projection parameters. The same shape doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct SaccParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array1<f64>,
    pub bv: Array1<f64>,
}

impl SaccParams {
    pub fn zeros(num_bins: usize, dim: usize) -> Self {
        Self {
            wq: Array2::zeros((num_bins, dim)),
            bq: Array1::zeros(dim),
            wk: Array2::zeros((num_bins, dim)),
            bk: Array1::zeros(dim),
            wv: Array1::zeros(num_bins),
            bv: Array1::zeros(1),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(seed: u64, num_bins: usize, dim: usize) -> Self {
        assert!(num_bins >= 1 && dim >= 1, "F and D must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qk_bound = (6.0 / (num_bins + dim) as f64).sqrt();
        let v_bound = (6.0 / (num_bins + 1) as f64).sqrt();
        let mut p = Self::zeros(num_bins, dim);
        p.wq.mapv_inplace(|_| rng.random_range(-qk_bound..qk_bound));
        p.wk.mapv_inplace(|_| rng.random_range(-qk_bound..qk_bound));
        p.wv.mapv_inplace(|_| rng.random_range(-v_bound..v_bound));
        p
    }

    pub fn num_bins(&self) -> usize {
        self.wq.nrows()
    }

    pub fn dim(&self) -> usize {
        self.wq.ncols()
    }

    /// `2 (F D + D) + (F + 1)`.
    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Flat views in checkpoint order: `Wq, bq, Wk, bk, Wv, bv`.
    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.wq.as_slice().expect("standard layout"),
            self.bq.as_slice().expect("standard layout"),
            self.wk.as_slice().expect("standard layout"),
            self.bk.as_slice().expect("standard layout"),
            self.wv.as_slice().expect("standard layout"),
            self.bv.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.wq.as_slice_mut().expect("standard layout"),
            self.bq.as_slice_mut().expect("standard layout"),
            self.wk.as_slice_mut().expect("standard layout"),
            self.bk.as_slice_mut().expect("standard layout"),
            self.wv.as_slice_mut().expect("standard layout"),
            self.bv.as_slice_mut().expect("standard layout"),
        ]
    }

    /// Reads parameter `index` in the flat checkpoint ordering.
    pub fn get_flat(&self, index: usize) -> f64 {
        let mut i = index;
        for t in self.tensors() {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn set_flat(&mut self, index: usize, value: f64) {
        let mut i = index;
        for t in self.tensors_mut() {
            if i < t.len() {
                t[i] = value;
                return;
            }
            i -= t.len();
        }
        panic!("parameter index {index} out of range");
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &SaccParams, alpha: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += alpha * b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    fn check_features(&self, feats: &MagnitudeFeatures) -> Result<()> {
        let (_, c, f) = feats.dims();
        if f != self.num_bins() {
            return Err(Error::contract(format!(
                "features have {f} bins, parameters expect {}",
                self.num_bins()
            )));
        }
        if c == 0 {
            return Err(Error::contract("need at least one channel"));
        }
        Ok(())
    }
}

/// Cached intermediates of [`forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct SaccActivations {
    /// `T x C x D`
    pub query: Array3<f64>,
    /// `T x C x D`
    pub key: Array3<f64>,
    /// `T x C`
    pub value: Array2<f64>,
    /// `T x C x C`, row-stochastic per frame
    pub att: Array3<f64>,
    /// `T x C`, sums to one per frame
    pub w: Array2<f64>,
    /// `T x F`
    pub s: Array2<f64>,
}

/// Gradients returned by [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct SaccGradients {
    pub params: SaccParams,
    /// Gradient w.r.t. the linear magnitude, through both the combination
    /// and the normalized-log path.
    pub mag: Array3<f64>,
}

pub(crate) fn softmax_in_place(mut x: ArrayViewMut1<'_, f64>) {
    let max = x.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    x.mapv_inplace(|v| (v - max).exp());
    let sum = x.sum();
    x.mapv_inplace(|v| v / sum);
}

/// Vector-Jacobian product of softmax: `p * (g - <p, g>)`.
pub fn softmax_backward(p: ArrayView1<'_, f64>, g: ArrayView1<'_, f64>) -> Array1<f64> {
    let dot = p.dot(&g);
    Array1::from_shape_fn(p.len(), |i| p[i] * (g[i] - dot))
}

fn project(z: ArrayView2<'_, f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = z.dot(w);
    out += b;
    out
}

pub fn forward(feats: &MagnitudeFeatures, params: &SaccParams) -> Result<SaccActivations> {
    params.check_features(feats)?;
    let (t, c, f) = feats.dims();
    let d = params.dim();
    let z = feats
        .normalized_logmag
        .view()
        .into_shape_with_order((t * c, f))
        .expect("standard layout");

    let query = project(z, &params.wq, &params.bq)
        .into_shape_with_order((t, c, d))
        .expect("reshape");
    let key = project(z, &params.wk, &params.bk)
        .into_shape_with_order((t, c, d))
        .expect("reshape");
    let value = (z.dot(&params.wv) + params.bv[0])
        .into_shape_with_order((t, c))
        .expect("reshape");

    let scale = 1.0 / (d as f64).sqrt();
    let mut att = Array3::zeros((t, c, c));
    let mut w = Array2::zeros((t, c));
    let mut s_out = Array2::zeros((t, f));
    for ti in 0..t {
        let q = query.index_axis(Axis(0), ti);
        let k = key.index_axis(Axis(0), ti);
        let mut a = q.dot(&k.t()) * scale;
        for row in a.axis_iter_mut(Axis(0)) {
            softmax_in_place(row);
        }
        let mut wt = a.dot(&value.row(ti));
        softmax_in_place(wt.view_mut());
        s_out
            .row_mut(ti)
            .assign(&wt.dot(&feats.mag.index_axis(Axis(0), ti)));
        att.index_axis_mut(Axis(0), ti).assign(&a);
        w.row_mut(ti).assign(&wt);
    }
    Ok(SaccActivations {
        query,
        key,
        value,
        att,
        w,
        s: s_out,
    })
}

/// Exact reverse-mode gradients of `<dloss_ds, S>`.
pub fn backward(
    feats: &MagnitudeFeatures,
    params: &SaccParams,
    acts: &SaccActivations,
    dloss_ds: ArrayView2<'_, f64>,
) -> Result<SaccGradients> {
    params.check_features(feats)?;
    let (t, c, f) = feats.dims();
    let d = params.dim();
    if acts.w.dim() != (t, c) || acts.query.dim() != (t, c, d) || acts.s.dim() != (t, f) {
        return Err(Error::contract(
            "activations were not produced from these features and parameters",
        ));
    }
    if dloss_ds.dim() != (t, f) {
        return Err(Error::contract(format!(
            "upstream gradient is {:?}, expected {:?}",
            dloss_ds.dim(),
            (t, f)
        )));
    }

    let scale = 1.0 / (d as f64).sqrt();
    let mut d_query = Array3::<f64>::zeros((t, c, d));
    let mut d_key = Array3::<f64>::zeros((t, c, d));
    let mut d_value = Array2::<f64>::zeros((t, c));
    let mut d_mag = Array3::<f64>::zeros((t, c, f));

    for ti in 0..t {
        let g = dloss_ds.row(ti);
        let mag_t = feats.mag.index_axis(Axis(0), ti);
        let w_t = acts.w.row(ti);
        let att_t = acts.att.index_axis(Axis(0), ti);
        let v_t = acts.value.row(ti);

        // S = w^T mag
        let d_w = mag_t.dot(&g);
        for ci in 0..c {
            d_mag
                .slice_mut(s![ti, ci, ..])
                .scaled_add(w_t[ci], &g);
        }
        // w = softmax(u), u = att v
        let d_u = softmax_backward(w_t, d_w.view());
        d_value.row_mut(ti).assign(&att_t.t().dot(&d_u));
        // att rows = softmax(logits rows); d_att = d_u v^T
        let mut d_logits = Array2::<f64>::zeros((c, c));
        for i in 0..c {
            let d_att_row = v_t.mapv(|v| v * d_u[i]);
            d_logits
                .row_mut(i)
                .assign(&softmax_backward(att_t.row(i), d_att_row.view()));
        }
        d_logits *= scale;
        let q = acts.query.index_axis(Axis(0), ti);
        let k = acts.key.index_axis(Axis(0), ti);
        d_query.index_axis_mut(Axis(0), ti).assign(&d_logits.dot(&k));
        d_key.index_axis_mut(Axis(0), ti).assign(&d_logits.t().dot(&q));
    }

    let z = feats
        .normalized_logmag
        .view()
        .into_shape_with_order((t * c, f))
        .expect("standard layout");
    let dq = d_query.into_shape_with_order((t * c, d)).expect("reshape");
    let dk = d_key.into_shape_with_order((t * c, d)).expect("reshape");
    let dv = d_value.into_shape_with_order(t * c).expect("reshape");

    let grads = SaccParams {
        wq: z.t().dot(&dq),
        bq: dq.sum_axis(Axis(0)),
        wk: z.t().dot(&dk),
        bk: dk.sum_axis(Axis(0)),
        wv: z.t().dot(&dv),
        bv: Array1::from_elem(1, dv.sum()),
    };

    let mut dz = dq.dot(&params.wq.t()) + dk.dot(&params.wk.t());
    for (mut row, &g) in dz.axis_iter_mut(Axis(0)).zip(dv.iter()) {
        row.scaled_add(g, &params.wv);
    }
    let dz = dz.into_shape_with_order((t, c, f)).expect("reshape");
    d_mag += &feats.backward_normalized(&dz);

    Ok(SaccGradients {
        params: grads,
        mag: d_mag,
    })
}

/// Everything produced on the way from waveform to log-Mel features.
#[derive(Debug, Clone)]
pub struct FeatureTrace {
    pub features: MagnitudeFeatures,
    pub activations: SaccActivations,
    pub log_mel: LogMel,
}

impl FeatureTrace {
    /// Final `T x M` features.
    pub fn output(&self) -> &Array2<f64> {
        &self.log_mel.features
    }
}

/// Forward pass on already-computed magnitude features.
pub fn sacc_features_from(
    features: MagnitudeFeatures,
    params: &SaccParams,
    fb: &MelFilterbank,
) -> Result<FeatureTrace> {
    let activations = forward(&features, params)?;
    let log_mel = log_mel(activations.s.view(), fb)?;
    Ok(FeatureTrace {
        features,
        activations,
        log_mel,
    })
}

/// STFT -> magnitude/MVN -> combinator -> log-Mel.
pub fn sacc_features(
    wave: &MultichannelWaveform,
    params: &SaccParams,
    cfg: &StftConfig,
    fb: &MelFilterbank,
) -> Result<FeatureTrace> {
    let features = magnitude_and_normalize(&stft(wave, cfg)?)?;
    sacc_features_from(features, params, fb)
}

/// Back-propagates a gradient on the log-Mel output to the parameters and
/// the input magnitude.
pub fn sacc_features_backward(
    trace: &FeatureTrace,
    params: &SaccParams,
    fb: &MelFilterbank,
    d_output: ArrayView2<'_, f64>,
) -> Result<SaccGradients> {
    let d_s = trace.log_mel.backward(fb, d_output);
    backward(&trace.features, params, &trace.activations, d_s.view())
}

pub const CHECKPOINT_LAYOUT_VERSION: u32 = 1;

/// JSON checkpoint record; matrices are flattened row-major (`F x D`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layout_version: u32,
    #[serde(rename = "F")]
    pub num_bins: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "Wq")]
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    #[serde(rename = "Wk")]
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    #[serde(rename = "Wv")]
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
}

impl From<&SaccParams> for Checkpoint {
    fn from(p: &SaccParams) -> Self {
        let [wq, bq, wk, bk, wv, bv] = p.tensors().map(<[f64]>::to_vec);
        Self {
            layout_version: CHECKPOINT_LAYOUT_VERSION,
            num_bins: p.num_bins(),
            dim: p.dim(),
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
        }
    }
}

impl TryFrom<Checkpoint> for SaccParams {
    type Error = Error;

    fn try_from(c: Checkpoint) -> Result<Self> {
        if c.layout_version != CHECKPOINT_LAYOUT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint layout version {} is not supported",
                c.layout_version
            )));
        }
        let (f, d) = (c.num_bins, c.dim);
        let bad = |what: &str| Error::Config(format!("checkpoint field {what} has the wrong length"));
        let p = SaccParams {
            wq: Array2::from_shape_vec((f, d), c.wq).map_err(|_| bad("Wq"))?,
            bq: (c.bq.len() == d).then(|| Array1::from(c.bq)).ok_or_else(|| bad("bq"))?,
            wk: Array2::from_shape_vec((f, d), c.wk).map_err(|_| bad("Wk"))?,
            bk: (c.bk.len() == d).then(|| Array1::from(c.bk)).ok_or_else(|| bad("bk"))?,
            wv: (c.wv.len() == f).then(|| Array1::from(c.wv)).ok_or_else(|| bad("Wv"))?,
            bv: (c.bv.len() == 1).then(|| Array1::from(c.bv)).ok_or_else(|| bad("bv"))?,
        };
        if !p.is_finite() {
            return Err(Error::Config("checkpoint contains non-finite values".into()));
        }
        Ok(p)
    }
}

pub fn save_checkpoint(params: &SaccParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string(&Checkpoint::from(params)).expect("checkpoint serializes");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SaccParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        reason: e.to_string(),
    })?;
    ckpt.try_into()
}
