use crate::data::{BiasedExample, DatasetKind};
use crate::error::{Error, Result};
use crate::nn::FEATURE_SIDE;
use crate::tensor::Tensor;

use super::morph::{dilate, edge_band, oracle_mask, BinaryMask};

/// Where a teacher map came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TeacherSource {
    Oracle,
    External,
}

/// Text prompts a vision-language teacher would be queried with. Carried as
/// provenance only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptMeta {
    pub foreground: Vec<String>,
    pub background: Vec<String>,
}

impl PromptMeta {
    pub fn for_dataset(kind: DatasetKind) -> Self {
        let mut background = vec!["Background", "dark", "black"];
        if kind == DatasetKind::Decoy {
            background.extend(["corner", "patch", "box", "corner patch"]);
        }
        PromptMeta {
            foreground: vec!["digit".to_string()],
            background: background.into_iter().map(String::from).collect(),
        }
    }
}

/// A strictly positive, unit-sum spatial distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherMap {
    grid: Tensor,
    pub source: TeacherSource,
    pub prompt: Option<PromptMeta>,
}

impl TeacherMap {
    pub fn grid(&self) -> &Tensor {
        &self.grid
    }

    pub fn into_grid(self) -> Tensor {
        self.grid
    }

    pub fn side(&self) -> (usize, usize) {
        (self.grid.shape()[0], self.grid.shape()[1])
    }
}

/// Morphology knobs for the oracle teacher.
#[derive(Clone, Debug, PartialEq)]
pub struct MorphParams {
    pub dilation_radius: usize,
    pub edge_band: bool,
    pub threshold: f64,
    pub eps: f64,
}

impl Default for MorphParams {
    fn default() -> Self {
        MorphParams {
            dilation_radius: 1,
            edge_band: true,
            threshold: 0.3,
            eps: 1e-6,
        }
    }
}

impl MorphParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} not in (0, 1)", self.threshold)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("teacher eps {} must be positive", self.eps)));
        }
        if self.edge_band && self.dilation_radius == 0 {
            return Err(Error::Config("edge band needs dilation radius >= 1".into()));
        }
        Ok(())
    }
}

/// `(m + ε) / Σ(m + ε)` for a nonnegative `[H, W]` grid.
pub fn normalize_map(m: &Tensor, eps: f64, source: TeacherSource) -> Result<TeacherMap> {
    if m.rank() != 2 {
        return Err(Error::dim(format!("teacher grid must be 2-D, got {:?}", m.shape())));
    }
    if let Some(v) = m.data().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("teacher grid has invalid entry {v}")));
    }
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("teacher eps {eps} must be positive")));
    }
    let total: f64 = m.data().iter().map(|v| v + eps).sum();
    Ok(TeacherMap {
        grid: m.map(|v| (v + eps) / total),
        source,
        prompt: None,
    })
}

pub fn normalize_mask(m: &BinaryMask, eps: f64) -> TeacherMap {
    normalize_map(&m.to_tensor(), eps, TeacherSource::Oracle).expect("binary masks are nonnegative")
}

/// The oracle mask after dataset-specific preprocessing, before normalization.
pub fn teacher_mask(clean_digit: &Tensor, kind: DatasetKind, p: &MorphParams) -> BinaryMask {
    let raw = oracle_mask(clean_digit, p.threshold);
    match kind {
        DatasetKind::Decoy => raw,
        DatasetKind::Colored => {
            let covered = dilate(&raw, p.dilation_radius);
            if p.edge_band {
                edge_band(&covered, p.dilation_radius)
            } else {
                covered
            }
        }
    }
}

/// ColoredMNIST: dilate the digit mask, then keep its boundary band.
/// DecoyMNIST: the raw thresholded mask.
pub fn build_teacher(example: &BiasedExample, kind: DatasetKind, p: &MorphParams) -> TeacherMap {
    let mut t = normalize_mask(&teacher_mask(&example.clean_digit, kind, p), p.eps);
    t.prompt = Some(PromptMeta::for_dataset(kind));
    t
}

/// 28×28 → 7×7 by 4×4 average pooling and renormalization.
pub fn downsample_teacher(t: &TeacherMap) -> Result<TeacherMap> {
    let (h, w) = t.side();
    if h != 28 || w != 28 {
        return Err(Error::dim(format!("downsample expects 28x28, got {h}x{w}")));
    }
    let pooled = t.grid.avg_pool2d(28 / FEATURE_SIDE)?;
    let total = pooled.sum();
    Ok(TeacherMap {
        grid: pooled.scale(1.0 / total),
        source: t.source,
        prompt: t.prompt.clone(),
    })
}

/// Wraps an already-normalized grid; used by the bundle loader.
pub(crate) fn from_normalized(grid: Tensor, source: TeacherSource) -> TeacherMap {
    TeacherMap {
        grid,
        source,
        prompt: None,
    }
}
