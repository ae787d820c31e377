use crate::error::{Error, Result};
use crate::tensor::{SeededRng, Tensor};

use super::conv::gemm;

/// Affine head `y = W x + b`; row `c` of `weights` is the class-`c` vector
/// that CAM projects the feature maps onto.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams {
    /// `[out, in]`
    pub weights: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl LinearParams {
    pub fn init(inputs: usize, outputs: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        LinearParams {
            weights: Tensor::uniform(&[outputs, inputs], -bound, bound, rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        LinearParams {
            weights: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }
}

fn batch_of(p: &LinearParams, x: &Tensor) -> Result<usize> {
    match *x.shape() {
        [b, f] if f == p.inputs() => Ok(b),
        ref s => Err(Error::dim(format!(
            "linear expects [B, {}], got {s:?}",
            p.inputs()
        ))),
    }
}

/// `x: [B, in] → [B, out]`
pub fn linear_forward(p: &LinearParams, x: &Tensor) -> Result<Tensor> {
    let b = batch_of(p, x)?;
    let out = p.outputs();
    let mut y = Vec::with_capacity(b * out);
    for _ in 0..b {
        y.extend_from_slice(p.bias.data());
    }
    gemm(b, p.inputs(), out, x.data(), false, p.weights.data(), true, 1.0, &mut y);
    Tensor::new(vec![b, out], y)
}

/// Returns `(dX, dW, dB)`.
pub fn linear_backward(p: &LinearParams, x: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let b = batch_of(p, x)?;
    let out = p.outputs();
    if dy.shape() != [b, out] {
        return Err(Error::dim(format!(
            "linear backward: dY {:?}, expected [{b}, {out}]",
            dy.shape()
        )));
    }
    let mut dx = vec![0.0; b * p.inputs()];
    gemm(b, out, p.inputs(), dy.data(), false, p.weights.data(), false, 0.0, &mut dx);
    let mut dw = Tensor::zeros(p.weights.shape());
    gemm(out, b, p.inputs(), dy.data(), true, x.data(), false, 0.0, dw.data_mut());
    let mut db = Tensor::zeros(&[out]);
    for row in dy.data().chunks(out) {
        for (d, g) in db.data_mut().iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok((Tensor::new(vec![b, p.inputs()], dx)?, dw, db))
}
