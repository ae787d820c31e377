use crate::error::{Error, Result};
use crate::tensor::{SeededRng, Tensor};

/// Stride-1 convolution with symmetric zero padding of `(k - 1) / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dParams {
    /// `[out_c, in_c, k, k]`
    pub weights: Tensor,
    /// `[out_c]`
    pub bias: Tensor,
}

/// Per-example column buffers from the forward pass.
#[derive(Clone, Debug)]
pub struct ConvCache {
    input_shape: [usize; 4],
    cols: Vec<f64>,
}

impl Conv2dParams {
    /// Weights uniform in `±1/sqrt(fan_in)`, zero bias.
    pub fn init(in_c: usize, out_c: usize, k: usize, rng: &mut SeededRng) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        let bound = 1.0 / ((in_c * k * k) as f64).sqrt();
        Conv2dParams {
            weights: Tensor::uniform(&[out_c, in_c, k, k], -bound, bound, rng),
            bias: Tensor::zeros(&[out_c]),
        }
    }

    pub fn zeros(in_c: usize, out_c: usize, k: usize) -> Self {
        Conv2dParams {
            weights: Tensor::zeros(&[out_c, in_c, k, k]),
            bias: Tensor::zeros(&[out_c]),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn padding(&self) -> usize {
        (self.kernel() - 1) / 2
    }

    fn check_input(&self, x: &Tensor) -> Result<[usize; 4]> {
        match *x.shape() {
            [b, c, h, w] if c == self.in_channels() => Ok([b, c, h, w]),
            [_, c, _, _] => Err(Error::dim(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels()
            ))),
            ref s => Err(Error::dim(format!("conv expects rank-4 input, got {s:?}"))),
        }
    }
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, pad: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    for (xo, d) in dst.iter_mut().enumerate() {
                        let sx = xo as isize + kx as isize - pad as isize;
                        *d = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, pad: usize, dx: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    for (xo, &g) in row[y * w..(y + 1) * w].iter().enumerate() {
                        let sx = xo as isize + kx as isize - pad as isize;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * a·b + beta * c` for row-major operands, optionally transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe dense row-major buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn forward_into(p: &Conv2dParams, x: &Tensor, cols: &mut [f64], keep: bool) -> Result<Tensor> {
    let [b, c, h, w] = p.check_input(x)?;
    let (oc, k, pad) = (p.out_channels(), p.kernel(), p.padding());
    let (hw, ckk) = (h * w, c * k * k);
    let mut y = vec![0.0; b * oc * hw];
    for i in 0..b {
        let col = if keep {
            &mut cols[i * ckk * hw..(i + 1) * ckk * hw]
        } else {
            &mut cols[..ckk * hw]
        };
        im2col(&x.data()[i * c * hw..(i + 1) * c * hw], c, h, w, k, pad, col);
        let out = &mut y[i * oc * hw..(i + 1) * oc * hw];
        for (o, row) in out.chunks_mut(hw).enumerate() {
            row.fill(p.bias.data()[o]);
        }
        gemm(oc, ckk, hw, p.weights.data(), false, col, false, 1.0, out);
    }
    Tensor::new(vec![b, oc, h, w], y)
}

/// Cross-correlation with zero padding; spatial size is preserved.
pub fn conv2d_forward(p: &Conv2dParams, x: &Tensor) -> Result<(Tensor, ConvCache)> {
    let [b, c, h, w] = p.check_input(x)?;
    let mut cols = vec![0.0; b * c * p.kernel() * p.kernel() * h * w];
    let y = forward_into(p, x, &mut cols, true)?;
    Ok((
        y,
        ConvCache {
            input_shape: [b, c, h, w],
            cols,
        },
    ))
}

/// Forward pass without retaining anything for backprop.
pub fn conv2d_apply(p: &Conv2dParams, x: &Tensor) -> Result<Tensor> {
    let [_, c, h, w] = p.check_input(x)?;
    let mut cols = vec![0.0; c * p.kernel() * p.kernel() * h * w];
    forward_into(p, x, &mut cols, false)
}

/// Gradients `(dX, dW, dB)` of the forward map. `dX` is skipped (returned as
/// `None`) when `want_dx` is false, e.g. for the first layer.
pub fn conv2d_backward(
    p: &Conv2dParams,
    cache: &ConvCache,
    dy: &Tensor,
    want_dx: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let [b, c, h, w] = cache.input_shape;
    let (oc, k, pad) = (p.out_channels(), p.kernel(), p.padding());
    if dy.shape() != [b, oc, h, w] {
        return Err(Error::dim(format!(
            "conv backward: dY shape {:?}, expected {:?}",
            dy.shape(),
            [b, oc, h, w]
        )));
    }
    let (hw, ckk) = (h * w, c * k * k);
    let mut dw = Tensor::zeros(p.weights.shape());
    let mut db = Tensor::zeros(&[oc]);
    let mut dx = want_dx.then(|| vec![0.0; b * c * hw]);
    let mut dcols = vec![0.0; ckk * hw];
    for i in 0..b {
        let g = &dy.data()[i * oc * hw..(i + 1) * oc * hw];
        let col = &cache.cols[i * ckk * hw..(i + 1) * ckk * hw];
        for (o, row) in g.chunks(hw).enumerate() {
            db.data_mut()[o] += row.iter().sum::<f64>();
        }
        gemm(oc, hw, ckk, g, false, col, true, 1.0, dw.data_mut());
        if let Some(dx) = dx.as_mut() {
            gemm(ckk, oc, hw, p.weights.data(), true, g, false, 0.0, &mut dcols);
            col2im(&dcols, c, h, w, k, pad, &mut dx[i * c * hw..(i + 1) * c * hw]);
        }
    }
    let dx = dx.map(|d| Tensor::new(vec![b, c, h, w], d)).transpose()?;
    Ok((dx, dw, db))
}
