use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "l1_logmel")]
    #[default]
    L1LogMel,
    #[serde(rename = "l2_logmel")]
    L2LogMel,
}

/// Mean absolute or mean squared error between two log-Mel feature maps,
/// and its gradient with respect to `output`.
pub fn surrogate_loss(
    output: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    kind: LossKind,
) -> Result<(f64, Array2<f64>)> {
    if output.dim() != target.dim() {
        return Err(Error::contract(format!(
            "loss inputs differ in shape: {:?} vs {:?}",
            output.dim(),
            target.dim()
        )));
    }
    let n = output.len();
    if n == 0 {
        return Err(Error::contract("loss over an empty feature map"));
    }
    let scale = 1.0 / n as f64;
    let mut grad = Array2::zeros(output.dim());
    let mut total = 0.0;
    Zip::from(&mut grad)
        .and(&output)
        .and(&target)
        .for_each(|g, &o, &t| {
            let d = o - t;
            match kind {
                LossKind::L1LogMel => {
                    total += d.abs();
                    *g = if d > 0.0 {
                        scale
                    } else if d < 0.0 {
                        -scale
                    } else {
                        0.0
                    };
                }
                LossKind::L2LogMel => {
                    total += d * d;
                    *g = 2.0 * d * scale;
                }
            }
        });
    Ok((total * scale, grad))
}
