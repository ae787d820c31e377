//! Class activation maps from the GAP head.
//!
//! For class `c` the raw map is `relu(Σ_k W[c,k] · A[k,h,w])` over the
//! post-ReLU last-conv features `A`; it is ε-smoothed and normalized to a
//! spatial distribution. The map is differentiable in both `A` and the head
//! weights, which is what lets the attention loss train the whole network.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::linear::LinearParams;
use super::model::{ForwardCache, NUM_CLASSES};
use super::pool::FEATURE_SIDE;

pub const DEFAULT_CAM_EPS: f64 = 1e-6;

const CELLS: usize = FEATURE_SIDE * FEATURE_SIDE;

/// Normalized 7×7 saliency for one example and class.
#[derive(Clone, Debug)]
pub struct SaliencyMap {
    grid: Tensor,
    raw: [f64; CELLS],
    normalizer: f64,
    example: usize,
    class: usize,
}

impl SaliencyMap {
    pub fn grid(&self) -> &Tensor {
        &self.grid
    }

    pub fn class(&self) -> usize {
        self.class
    }

    /// Pre-ReLU class-weighted feature sum.
    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// Accumulates `dL/dA` for this example into `d_features` and
    /// `dL/dW_head` into `d_head_weights`, given `d_grid = dL/dS`.
    pub fn backward(
        &self,
        features: &Tensor,
        head: &LinearParams,
        d_grid: &[f64],
        d_features: &mut Tensor,
        d_head_weights: &mut Tensor,
    ) -> Result<()> {
        if d_grid.len() != CELLS {
            return Err(Error::dim(format!("CAM gradient needs {CELLS} cells")));
        }
        let s = self.grid.data();
        let dot: f64 = d_grid.iter().zip(s).map(|(g, v)| g * v).sum();
        // S = (m + ε)/Z  ⇒  dm_j = (dS_j − Σ_l dS_l S_l) / Z, then through the ReLU.
        let mut d_raw = [0.0; CELLS];
        for j in 0..CELLS {
            if self.raw[j] > 0.0 {
                d_raw[j] = (d_grid[j] - dot) / self.normalizer;
            }
        }
        let k_count = features.shape()[1];
        let a = &features.data()[self.example * k_count * CELLS..(self.example + 1) * k_count * CELLS];
        let w = &head.weights.data()[self.class * k_count..(self.class + 1) * k_count];
        let da = &mut d_features.data_mut()[self.example * k_count * CELLS..(self.example + 1) * k_count * CELLS];
        let dw = &mut d_head_weights.data_mut()[self.class * k_count..(self.class + 1) * k_count];
        for k in 0..k_count {
            let plane = &a[k * CELLS..(k + 1) * CELLS];
            let dplane = &mut da[k * CELLS..(k + 1) * CELLS];
            let mut acc = 0.0;
            for j in 0..CELLS {
                dplane[j] += w[k] * d_raw[j];
                acc += d_raw[j] * plane[j];
            }
            dw[k] += acc;
        }
        Ok(())
    }
}

/// CAM of `class` for batch element `example`, from cached features.
pub fn cam(cache: &ForwardCache, head: &LinearParams, example: usize, class: usize, eps: f64) -> Result<SaliencyMap> {
    cam_from_features(&cache.features, head, example, class, eps)
}

/// Same as [`cam`] but from a bare `[B, K, 7, 7]` feature tensor.
pub fn cam_from_features(
    features: &Tensor,
    head: &LinearParams,
    example: usize,
    class: usize,
    eps: f64,
) -> Result<SaliencyMap> {
    if class >= NUM_CLASSES.min(head.outputs()) {
        return Err(Error::Index(format!("class {class} out of range")));
    }
    let [b, k_count] = match *features.shape() {
        [b, k, FEATURE_SIDE, FEATURE_SIDE] if k == head.inputs() => [b, k],
        ref s => return Err(Error::dim(format!("CAM needs [B, {}, 7, 7], got {s:?}", head.inputs()))),
    };
    if example >= b {
        return Err(Error::Index(format!("example {example} out of range for batch {b}")));
    }
    let a = &features.data()[example * k_count * CELLS..(example + 1) * k_count * CELLS];
    let w = &head.weights.data()[class * k_count..(class + 1) * k_count];
    let mut raw = [0.0; CELLS];
    for (k, plane) in a.chunks(CELLS).enumerate() {
        let wk = w[k];
        for (r, &v) in raw.iter_mut().zip(plane) {
            *r += wk * v;
        }
    }
    let normalizer: f64 = raw.iter().map(|&r| r.max(0.0) + eps).sum();
    if !(normalizer > 0.0) || !normalizer.is_finite() {
        return Err(Error::Numerical(format!("CAM normalizer {normalizer}")));
    }
    let grid: Vec<f64> = raw.iter().map(|&r| (r.max(0.0) + eps) / normalizer).collect();
    Ok(SaliencyMap {
        grid: Tensor::new(vec![FEATURE_SIDE, FEATURE_SIDE], grid)?,
        raw,
        normalizer,
        example,
        class,
    })
}
