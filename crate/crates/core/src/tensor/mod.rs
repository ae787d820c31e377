//! Dense row-major `f64` tensors and the handful of primitives the rest of
//! the crate is built on.
//!
//! There are no strided views and no broadcasting: binary operations take
//! either a tensor of identical shape or a scalar. Layers in [`crate::nn`]
//! index the flat storage directly.

mod gradcheck;
mod rng;

pub use gradcheck::{finite_diff_gradient, relative_error, DEFAULT_FD_STEP};
pub use rng::SeededRng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Reduction applied by [`Tensor::reduce`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(Error::dim(format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero-sized dimension");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.shape)
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut SeededRng) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = rng.uniform_range(lo, hi);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Element at a full multi-index.
    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {i} out of bounds for dim {d}");
                acc * d + i
            })
    }

    /// Sub-tensor `self[i]` along the leading axis, copied out.
    pub fn slice_outer(&self, i: usize) -> Tensor {
        let inner: usize = self.shape[1..].iter().product();
        let shape = if self.shape.len() > 1 {
            self.shape[1..].to_vec()
        } else {
            vec![1]
        };
        Tensor {
            shape,
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("cannot stack zero tensors"))?;
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return Err(Error::dim(format!(
                    "stack shape mismatch {:?} vs {:?}",
                    p.shape, first.shape
                )));
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    fn check_same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "{op}: shape {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        self.map(|v| v + s)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn exp(&self) -> Tensor {
        self.map(f64::exp)
    }

    /// Natural log; every element must be strictly positive.
    pub fn ln(&self) -> Result<Tensor> {
        if let Some((i, v)) = self.data.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::Domain(format!("log of {v} at flat index {i}")));
        }
        Ok(self.map(f64::ln))
    }

    /// In-place `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Flat index of the largest element; ties go to the smallest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reduces over `axes` (empty slice means every axis).
    ///
    /// With `keep_dims` the reduced axes stay with size 1; otherwise they are
    /// dropped, and a full reduction yields shape `[1]`.
    pub fn reduce(&self, op: Reduction, axes: &[usize], keep_dims: bool) -> Result<Tensor> {
        let rank = self.shape.len();
        let mut reduced = vec![axes.is_empty(); rank];
        for &ax in axes {
            if ax >= rank {
                return Err(Error::dim(format!("axis {ax} invalid for rank {rank}")));
            }
            if reduced[ax] {
                return Err(Error::dim(format!("axis {ax} repeated")));
            }
            reduced[ax] = true;
        }
        let kept_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(&reduced)
            .map(|(&d, &r)| if r { 1 } else { d })
            .collect();
        let out_len: usize = kept_shape.iter().product();
        let init = match op {
            Reduction::Max => f64::NEG_INFINITY,
            _ => 0.0,
        };
        let mut out = vec![init; out_len];

        let mut idx = vec![0usize; rank];
        for &v in &self.data {
            let o = idx
                .iter()
                .zip(&kept_shape)
                .zip(&reduced)
                .fold(0, |acc, ((&i, &d), &r)| acc * d + if r { 0 } else { i });
            match op {
                Reduction::Max => out[o] = out[o].max(v),
                _ => out[o] += v,
            }
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < self.shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        if op == Reduction::Mean {
            let count = (self.data.len() / out_len) as f64;
            out.iter_mut().for_each(|v| *v /= count);
        }
        let shape = if keep_dims {
            kept_shape
        } else {
            let s: Vec<usize> = self
                .shape
                .iter()
                .zip(&reduced)
                .filter(|(_, &r)| !r)
                .map(|(&d, _)| d)
                .collect();
            if s.is_empty() {
                vec![1]
            } else {
                s
            }
        };
        Tensor::new(shape, out)
    }

    /// Mean over non-overlapping `k`×`k` windows of a rank-2 tensor.
    pub fn avg_pool2d(&self, k: usize) -> Result<Tensor> {
        let (h, w) = match self.shape[..] {
            [h, w] => (h, w),
            _ => return Err(Error::dim(format!("avg_pool2d needs rank 2, got {:?}", self.shape))),
        };
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::dim(format!("{h}x{w} not divisible by window {k}")));
        }
        let (oh, ow) = (h / k, w / k);
        let norm = 1.0 / (k * k) as f64;
        let mut out = vec![0.0; oh * ow];
        for (oy, row) in out.chunks_mut(ow).enumerate() {
            for (ox, cell) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for y in oy * k..(oy + 1) * k {
                    let base = y * w + ox * k;
                    acc += self.data[base..base + k].iter().sum::<f64>();
                }
                *cell = acc * norm;
            }
        }
        Tensor::new(vec![oh, ow], out)
    }
}

/// Index of the maximum; ties resolve to the first occurrence.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn elementwise_basics() {
        assert_eq!(t(&[3], &[-1., 0., 2.]).relu().data(), &[0., 0., 2.]);
        let x = t(&[2, 2], &[1., -2., 3., 4.]);
        assert_eq!(x.add(&Tensor::zeros_like(&x)).unwrap(), x);
        assert_eq!(t(&[2], &[2., 3.]).mul(&t(&[2], &[4., 5.])).unwrap().data(), &[8., 15.]);
        assert!(matches!(
            t(&[2], &[1., 2.]).add(&t(&[3], &[1., 2., 3.])),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(t(&[2], &[1., 0.]).ln(), Err(Error::Domain(_))));
        assert!((t(&[1], &[1.0]).exp().data()[0] - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn reductions() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(a.reduce(Reduction::Sum, &[], false).unwrap().data(), &[10.]);
        let m = t(&[2, 2], &[1., 5., 3., 4.]);
        assert_eq!(m.reduce(Reduction::Max, &[1], false).unwrap().data(), &[5., 4.]);
        let kept = m.reduce(Reduction::Max, &[1], true).unwrap();
        assert_eq!(kept.shape(), &[2, 1]);
        assert_eq!(Tensor::ones(&[7, 7]).reduce(Reduction::Mean, &[], false).unwrap().data(), &[1.]);
        assert!(a.reduce(Reduction::Sum, &[2], false).is_err());

        let b = Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap();
        let s = b.reduce(Reduction::Sum, &[0, 2], false).unwrap();
        assert_eq!(s.data(), &[0. + 1. + 6. + 7., 2. + 3. + 8. + 9., 4. + 5. + 10. + 11.]);
    }

    #[test]
    fn pooling_examples() {
        assert_eq!(Tensor::ones(&[4, 4]).avg_pool2d(2).unwrap(), Tensor::ones(&[2, 2]));
        assert_eq!(t(&[2, 2], &[4., 0., 0., 0.]).avg_pool2d(2).unwrap().data(), &[1.]);
        assert!(Tensor::ones(&[5, 4]).avg_pool2d(2).is_err());
    }

    #[test]
    fn pooling_matches_brute_force() {
        let mut rng = SeededRng::new(3);
        let a = Tensor::uniform(&[28, 28], -1.0, 1.0, &mut rng);
        let pooled = a.avg_pool2d(4).unwrap();
        for oy in 0..7 {
            for ox in 0..7 {
                let mut acc = 0.0;
                for dy in 0..4 {
                    for dx in 0..4 {
                        acc += a.at(&[oy * 4 + dy, ox * 4 + dx]);
                    }
                }
                assert!((pooled.at(&[oy, ox]) - acc / 16.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[1., 3., 3.]), 1);
        assert_eq!(argmax(&[0., 0.]), 0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pooling_conserves_mass(seed in any::<u64>(), k in 1usize..5, blocks in 1usize..6) {
                let mut rng = SeededRng::new(seed);
                let n = k * blocks;
                let a = Tensor::uniform(&[n, n], -3.0, 3.0, &mut rng);
                let pooled = a.avg_pool2d(k).unwrap();
                prop_assert!((pooled.sum() * (k * k) as f64 - a.sum()).abs() < 1e-10);
            }

            #[test]
            fn relu_idempotent(v in proptest::collection::vec(-1e3f64..1e3, 1..64)) {
                let x = Tensor::from_slice(&v);
                prop_assert_eq!(x.relu().relu(), x.relu());
            }
        }
    }
}
