use crate::error::{Error, Result};
use crate::tensor::{SeededRng, Tensor};

use super::conv::{conv2d_apply, conv2d_backward, conv2d_forward, Conv2dParams, ConvCache};
use super::linear::{linear_backward, linear_forward, LinearParams};
use super::pool::{
    gap_backward, gap_forward, maxpool2d_backward, maxpool2d_forward, relu_backward, MaxPoolCache,
};

pub const INPUT_CHANNELS: usize = 3;
pub const IMAGE_SIDE: usize = 28;
pub const NUM_CLASSES: usize = 10;
pub const FEATURE_CHANNELS: usize = 64;

/// All learnable weights:
/// conv(3→16, 5×5) → ReLU → pool → conv(16→32, 5×5) → ReLU → pool →
/// conv(32→64, 3×3) → ReLU → GAP → linear(64→10).
///
/// The same struct doubles as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub conv1: Conv2dParams,
    pub conv2: Conv2dParams,
    pub conv3: Conv2dParams,
    pub head: LinearParams,
}

/// Activations kept from [`model_forward`] for backprop and CAM.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    conv1: ConvCache,
    pre1: Tensor,
    pool1: MaxPoolCache,
    conv2: ConvCache,
    pre2: Tensor,
    pool2: MaxPoolCache,
    conv3: ConvCache,
    pre3: Tensor,
    /// Post-ReLU last-conv maps `A`, `[B, 64, 7, 7]`.
    pub features: Tensor,
    /// GAP output, `[B, 64]`.
    pub pooled: Tensor,
    /// `[B, 10]`
    pub logits: Tensor,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.logits.shape()[0]
    }
}

impl ModelParams {
    pub fn init(rng: &mut SeededRng) -> Self {
        ModelParams {
            conv1: Conv2dParams::init(INPUT_CHANNELS, 16, 5, rng),
            conv2: Conv2dParams::init(16, 32, 5, rng),
            conv3: Conv2dParams::init(32, FEATURE_CHANNELS, 3, rng),
            head: LinearParams::init(FEATURE_CHANNELS, NUM_CLASSES, rng),
        }
    }

    pub fn zeros() -> Self {
        ModelParams {
            conv1: Conv2dParams::zeros(INPUT_CHANNELS, 16, 5),
            conv2: Conv2dParams::zeros(16, 32, 5),
            conv3: Conv2dParams::zeros(32, FEATURE_CHANNELS, 3),
            head: LinearParams::zeros(FEATURE_CHANNELS, NUM_CLASSES),
        }
    }

    pub const TENSOR_NAMES: [&'static str; 8] = [
        "conv1.weight",
        "conv1.bias",
        "conv2.weight",
        "conv2.bias",
        "conv3.weight",
        "conv3.bias",
        "head.weight",
        "head.bias",
    ];

    /// Parameter tensors in [`Self::TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&Tensor; 8] {
        [
            &self.conv1.weights,
            &self.conv1.bias,
            &self.conv2.weights,
            &self.conv2.bias,
            &self.conv3.weights,
            &self.conv3.bias,
            &self.head.weights,
            &self.head.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.conv1.weights,
            &mut self.conv1.bias,
            &mut self.conv2.weights,
            &mut self.conv2.bias,
            &mut self.conv3.weights,
            &mut self.conv3.bias,
            &mut self.head.weights,
            &mut self.head.bias,
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

fn check_input(x: &Tensor) -> Result<()> {
    match *x.shape() {
        [_, INPUT_CHANNELS, IMAGE_SIDE, IMAGE_SIDE] => Ok(()),
        ref s => Err(Error::dim(format!("model expects [B, 3, 28, 28], got {s:?}"))),
    }
}

/// Logits `[B, 10]` plus everything needed for backprop and CAM.
pub fn model_forward(params: &ModelParams, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
    check_input(x)?;
    let (pre1, conv1) = conv2d_forward(&params.conv1, x)?;
    let (h1, pool1) = maxpool2d_forward(&pre1.relu())?;
    let (pre2, conv2) = conv2d_forward(&params.conv2, &h1)?;
    let (h2, pool2) = maxpool2d_forward(&pre2.relu())?;
    let (pre3, conv3) = conv2d_forward(&params.conv3, &h2)?;
    let features = pre3.relu();
    let pooled = gap_forward(&features)?;
    let logits = linear_forward(&params.head, &pooled)?;
    Ok((
        logits.clone(),
        ForwardCache {
            conv1,
            pre1,
            pool1,
            conv2,
            pre2,
            pool2,
            conv3,
            pre3,
            features,
            pooled,
            logits,
        },
    ))
}

/// Inference-only pass returning `(logits, features)`.
pub fn model_infer(params: &ModelParams, x: &Tensor) -> Result<(Tensor, Tensor)> {
    check_input(x)?;
    let h1 = maxpool2d_forward(&conv2d_apply(&params.conv1, x)?.relu())?.0;
    let h2 = maxpool2d_forward(&conv2d_apply(&params.conv2, &h1)?.relu())?.0;
    let features = conv2d_apply(&params.conv3, &h2)?.relu();
    let logits = linear_forward(&params.head, &gap_forward(&features)?)?;
    Ok((logits, features))
}

/// Backpropagates upstream gradients into `grads` (accumulating).
///
/// `d_logits` is the loss gradient at the logits; `d_features` is an extra
/// gradient arriving directly at the post-ReLU feature maps (the CAM path).
/// Either may be absent.
pub fn model_backward(
    params: &ModelParams,
    cache: &ForwardCache,
    d_logits: Option<&Tensor>,
    d_features: Option<&Tensor>,
    grads: &mut ModelParams,
) -> Result<()> {
    let mut d_a = match d_features {
        Some(d) => {
            if d.shape() != cache.features.shape() {
                return Err(Error::dim("feature gradient shape mismatch"));
            }
            d.clone()
        }
        None => Tensor::zeros_like(&cache.features),
    };
    if let Some(dl) = d_logits {
        let (d_pooled, dw, db) = linear_backward(&params.head, &cache.pooled, dl)?;
        grads.head.weights.axpy(1.0, &dw)?;
        grads.head.bias.axpy(1.0, &db)?;
        d_a.axpy(1.0, &gap_backward(&d_pooled)?)?;
    }

    let d3 = relu_backward(&cache.pre3, &d_a)?;
    let (dh2, dw3, db3) = conv2d_backward(&params.conv3, &cache.conv3, &d3, true)?;
    grads.conv3.weights.axpy(1.0, &dw3)?;
    grads.conv3.bias.axpy(1.0, &db3)?;

    let d2 = relu_backward(&cache.pre2, &maxpool2d_backward(&cache.pool2, &dh2.expect("dx requested"))?)?;
    let (dh1, dw2, db2) = conv2d_backward(&params.conv2, &cache.conv2, &d2, true)?;
    grads.conv2.weights.axpy(1.0, &dw2)?;
    grads.conv2.bias.axpy(1.0, &db2)?;

    let d1 = relu_backward(&cache.pre1, &maxpool2d_backward(&cache.pool1, &dh1.expect("dx requested"))?)?;
    let (_, dw1, db1) = conv2d_backward(&params.conv1, &cache.conv1, &d1, false)?;
    grads.conv1.weights.axpy(1.0, &dw1)?;
    grads.conv1.bias.axpy(1.0, &db1)?;
    Ok(())
}
