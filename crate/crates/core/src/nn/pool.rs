use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Spatial side of the last feature map, fixed by the 28 → 14 → 7 path.
pub const FEATURE_SIDE: usize = 7;

#[derive(Clone, Debug)]
pub struct MaxPoolCache {
    input_shape: [usize; 4],
    /// Flat input index chosen by each output cell.
    argmax: Vec<usize>,
}

fn rank4(x: &Tensor, what: &str) -> Result<[usize; 4]> {
    match *x.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        ref s => Err(Error::dim(format!("{what} expects rank-4 input, got {s:?}"))),
    }
}

/// 2×2 non-overlapping max pooling. Ties go to the first cell in row-major
/// order within the window.
pub fn maxpool2d_forward(x: &Tensor) -> Result<(Tensor, MaxPoolCache)> {
    let [b, c, h, w] = rank4(x, "maxpool")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!("maxpool needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = x.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let first = base + 2 * oy * w + 2 * ox;
                let mut best = first;
                for idx in [first + 1, first + w, first + w + 1] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(vec![b, c, oh, ow], out)?,
        MaxPoolCache {
            input_shape: [b, c, h, w],
            argmax,
        },
    ))
}

pub fn maxpool2d_backward(cache: &MaxPoolCache, dy: &Tensor) -> Result<Tensor> {
    if dy.len() != cache.argmax.len() {
        return Err(Error::dim(format!(
            "maxpool backward: {} upstream values for {} outputs",
            dy.len(),
            cache.argmax.len()
        )));
    }
    let mut dx = Tensor::zeros(&cache.input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(dy.data()) {
        d[idx] += g;
    }
    Ok(dx)
}

/// Global average pooling over a 7×7 map: `[B, C, 7, 7] → [B, C]`.
pub fn gap_forward(x: &Tensor) -> Result<Tensor> {
    let [b, c, h, w] = rank4(x, "gap")?;
    if h != FEATURE_SIDE || w != FEATURE_SIDE {
        return Err(Error::dim(format!("gap expects 7x7 maps, got {h}x{w}")));
    }
    let area = (h * w) as f64;
    let out = x
        .data()
        .chunks(h * w)
        .map(|plane| plane.iter().sum::<f64>() / area)
        .collect();
    Tensor::new(vec![b, c], out)
}

pub fn gap_backward(dy: &Tensor) -> Result<Tensor> {
    let [b, c] = match *dy.shape() {
        [b, c] => [b, c],
        ref s => return Err(Error::dim(format!("gap backward expects [B, C], got {s:?}"))),
    };
    let area = FEATURE_SIDE * FEATURE_SIDE;
    let mut out = Vec::with_capacity(b * c * area);
    for &g in dy.data() {
        out.extend(std::iter::repeat_n(g / area as f64, area));
    }
    Tensor::new(vec![b, c, FEATURE_SIDE, FEATURE_SIDE], out)
}

/// Masks `dy` by `pre > 0` (subgradient 0 at exactly 0).
pub fn relu_backward(pre: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if pre.shape() != dy.shape() {
        return Err(Error::dim("relu backward shape mismatch"));
    }
    let data = pre
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(pre.shape().to_vec(), data)
}
