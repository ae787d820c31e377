//! Binary morphology with square structuring elements.
//!
//! Radius `r` means the `(2r+1)×(2r+1)` square, i.e. Chebyshev distance
//! `≤ r`. Dilation treats pixels outside the grid as 0; erosion also treats
//! them as 0, so any window that leaves the grid erodes to 0. Both are
//! computed separably (rows, then columns).

use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), height * width, "mask size mismatch");
        BinaryMask { height, width, bits }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![false; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn not(&self) -> BinaryMask {
        self.map2(self, |a, _| !a)
    }

    pub fn and(&self, other: &BinaryMask) -> BinaryMask {
        self.map2(other, |a, b| a && b)
    }

    pub fn and_not(&self, other: &BinaryMask) -> BinaryMask {
        self.map2(other, |a, b| a && !b)
    }

    fn map2(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> BinaryMask {
        assert_eq!((self.height, self.width), (other.height, other.width));
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// 0/1 values as a `[H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width],
            self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask dims are positive")
    }
}

/// `1` where the digit intensity exceeds `threshold`.
pub fn oracle_mask(digit: &Tensor, threshold: f64) -> BinaryMask {
    let (h, w) = match *digit.shape() {
        [h, w] => (h, w),
        ref s => panic!("oracle_mask expects a 2-D digit, got {s:?}"),
    };
    BinaryMask::new(h, w, digit.data().iter().map(|&v| v > threshold).collect())
}

/// One separable pass. `any` selects dilation (OR) vs. erosion (AND).
fn pass(m: &BinaryMask, r: usize, horizontal: bool, any: bool) -> BinaryMask {
    let (h, w) = (m.height, m.width);
    let mut out = BinaryMask::empty(h, w);
    let r = r as isize;
    for y in 0..h {
        for x in 0..w {
            let mut acc = !any;
            for d in -r..=r {
                let (yy, xx) = if horizontal {
                    (y as isize, x as isize + d)
                } else {
                    (y as isize + d, x as isize)
                };
                let inside = yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize;
                let v = inside && m.get(yy as usize, xx as usize);
                if any && v {
                    acc = true;
                    break;
                }
                if !any && !v {
                    acc = false;
                    break;
                }
            }
            out.set(y, x, acc);
        }
    }
    out
}

pub fn dilate(m: &BinaryMask, r: usize) -> BinaryMask {
    if r == 0 {
        return m.clone();
    }
    pass(&pass(m, r, true, true), r, false, true)
}

pub fn erode(m: &BinaryMask, r: usize) -> BinaryMask {
    if r == 0 {
        return m.clone();
    }
    pass(&pass(m, r, true, false), r, false, false)
}

/// `dilate(m, r) ∧ ¬erode(m, r)`: a ring of width about `2r` on the boundary.
pub fn morphological_gradient(m: &BinaryMask, r: usize) -> BinaryMask {
    dilate(m, r).and_not(&erode(m, r))
}

/// Boundary band: the morphological gradient followed by a radius-1
/// dilation. Stands in for an edge detector plus light dilation on binary
/// digit masks.
pub fn edge_band(m: &BinaryMask, r: usize) -> BinaryMask {
    assert!(r >= 1, "edge band radius must be at least 1");
    dilate(&morphological_gradient(m, r), 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SeededRng;

    fn random_mask(rng: &mut SeededRng, density: f64) -> BinaryMask {
        BinaryMask::new(28, 28, (0..784).map(|_| rng.uniform() < density).collect())
    }

    #[test]
    fn thresholding() {
        assert_eq!(oracle_mask(&Tensor::zeros(&[28, 28]), 0.3).count(), 0);
        assert_eq!(oracle_mask(&Tensor::ones(&[28, 28]), 0.3).count(), 784);
        let mut d = Tensor::full(&[28, 28], 0.2);
        d.set(&[3, 4], 0.4);
        d.set(&[10, 11], 0.4);
        let m = oracle_mask(&d, 0.3);
        assert_eq!(m.count(), 2);
        assert!(m.get(3, 4) && m.get(10, 11));
    }

    #[test]
    fn point_dilates_to_block() {
        let mut m = BinaryMask::empty(28, 28);
        m.set(14, 14, true);
        let d = dilate(&m, 1);
        assert_eq!(d.count(), 9);
        for y in 13..=15 {
            for x in 13..=15 {
                assert!(d.get(y, x));
            }
        }
    }

    #[test]
    fn zero_radius_is_identity() {
        let m = random_mask(&mut SeededRng::new(1), 0.4);
        assert_eq!(dilate(&m, 0), m);
        assert_eq!(erode(&m, 0), m);
    }

    #[test]
    fn full_mask_erodes_at_border() {
        let full = BinaryMask::new(28, 28, vec![true; 784]);
        let e = erode(&full, 1);
        assert!(!e.get(0, 5) && !e.get(27, 27));
        assert!(e.get(1, 1));
        assert_eq!(e.count(), 26 * 26);
    }

    #[test]
    fn gradient_excludes_erosion() {
        let mut rng = SeededRng::new(2);
        for _ in 0..50 {
            let m = random_mask(&mut rng, 0.6);
            for r in 1..3 {
                assert_eq!(morphological_gradient(&m, r).and(&erode(&m, r)).count(), 0);
                assert_eq!(edge_band(&m, r).and(&erode(&m, r + 1)).count(), 0);
            }
        }
        assert_eq!(edge_band(&BinaryMask::empty(28, 28), 1).count(), 0);
    }

    #[test]
    fn duality_away_from_border() {
        let mut rng = SeededRng::new(3);
        for _ in 0..50 {
            let m = random_mask(&mut rng, 0.7);
            for r in 1..4 {
                let e = erode(&m, r);
                let dual = dilate(&m.not(), r).not();
                for y in 0..28 {
                    for x in 0..28 {
                        let interior = y >= r && x >= r && y + r < 28 && x + r < 28;
                        if interior {
                            assert_eq!(e.get(y, x), dual.get(y, x));
                        } else {
                            // Windows that leave the grid see a 0 border.
                            assert!(!e.get(y, x));
                        }
                    }
                }
            }
        }
    }
}
