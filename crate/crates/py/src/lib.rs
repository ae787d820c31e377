//! Python bindings: dataset synthesis, oracle teachers, training, evaluation,
//! and CAM extraction. Tensors cross the boundary as flat `list[float]`
//! in row-major order.

use std::path::PathBuf;

use attn_align::data::{load_idx, synthesize, BiasedExample, DatasetKind, DatasetSplit, Palette, SynthOptions};
use attn_align::nn::{cam_from_features, load_checkpoint, model_infer, save_checkpoint, ModelParams, DEFAULT_CAM_EPS};
use attn_align::teacher::{build_teacher, dilate, downsample_teacher, edge_band, erode, BinaryMask, MorphParams};
use attn_align::tensor::Tensor;
use attn_align::training::{self as tr, Teachers};
use attn_align::Error;
use pyo3::exceptions::{PyArithmeticError, PyIndexError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Index(_) => PyIndexError::new_err(e.to_string()),
        Error::Numerical(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn kind(s: &str) -> PyResult<DatasetKind> {
    s.parse().map_err(py_err)
}

/// A synthesized ColoredMNIST or DecoyMNIST split.
#[pyclass(module = "attn_align", frozen)]
struct Dataset {
    split: DatasetSplit,
}

impl Dataset {
    fn part(&self, name: &str) -> PyResult<&[BiasedExample]> {
        match name {
            "train" => Ok(&self.split.train),
            "val" => Ok(&self.split.val),
            "test" => Ok(&self.split.test),
            other => Err(PyValueError::new_err(format!("unknown split '{other}' (train|val|test)"))),
        }
    }

    fn example(&self, name: &str, index: usize) -> PyResult<&BiasedExample> {
        let part = self.part(name)?;
        part.get(index)
            .ok_or_else(|| PyIndexError::new_err(format!("{name}[{index}] out of range ({})", part.len())))
    }
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    #[pyo3(signature = (kind_name, train_images, train_labels, test_images, test_labels, seed=0, train_limit=None, test_limit=None, val_fraction=0.1))]
    #[allow(clippy::too_many_arguments)]
    fn synthesize(
        kind_name: &str,
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        seed: u64,
        train_limit: Option<usize>,
        test_limit: Option<usize>,
        val_fraction: f64,
    ) -> PyResult<Self> {
        let train = load_idx(&train_images, &train_labels).map_err(py_err)?;
        let test = load_idx(&test_images, &test_labels).map_err(py_err)?;
        let opts = SynthOptions {
            val_fraction,
            train_limit,
            test_limit,
        };
        let split = synthesize(kind(kind_name)?, &train, &test, seed, &Palette::default(), &opts).map_err(py_err)?;
        Ok(Dataset { split })
    }

    #[getter]
    fn kind(&self) -> String {
        self.split.kind.to_string()
    }

    /// Number of examples in `split`.
    fn size(&self, split: &str) -> PyResult<usize> {
        Ok(self.part(split)?.len())
    }

    /// `[3, 28, 28]` image as a flat list.
    fn image(&self, split: &str, index: usize) -> PyResult<Vec<f64>> {
        Ok(self.example(split, index)?.image.data().to_vec())
    }

    fn label(&self, split: &str, index: usize) -> PyResult<usize> {
        Ok(self.example(split, index)?.label)
    }

    /// 28×28 oracle teacher map (unit sum) for one example.
    #[pyo3(signature = (split, index, threshold=0.3, dilation_radius=1))]
    fn teacher(&self, split: &str, index: usize, threshold: f64, dilation_radius: usize) -> PyResult<Vec<f64>> {
        let p = MorphParams {
            threshold,
            dilation_radius,
            ..MorphParams::default()
        };
        p.validate().map_err(py_err)?;
        Ok(build_teacher(self.example(split, index)?, self.split.kind, &p).grid().data().to_vec())
    }
}

/// Training hyperparameters; `selected` gives the chosen cell for a dataset.
#[pyclass(module = "attn_align", skip_from_py_object)]
#[derive(Clone)]
struct TrainConfig {
    inner: tr::TrainConfig,
}

#[pymethods]
impl TrainConfig {
    #[new]
    #[pyo3(signature = (kind_name="colored"))]
    fn new(kind_name: &str) -> PyResult<Self> {
        Self::selected(kind_name)
    }

    #[staticmethod]
    fn selected(kind_name: &str) -> PyResult<Self> {
        Ok(TrainConfig {
            inner: tr::TrainConfig::selected(kind(kind_name)?),
        })
    }

    /// Cross-entropy only (`lambda0 = 0`, `e_attn = 0`).
    #[staticmethod]
    fn baseline(kind_name: &str) -> PyResult<Self> {
        Ok(TrainConfig {
            inner: tr::TrainConfig::baseline(kind(kind_name)?),
        })
    }

    #[getter]
    fn dataset(&self) -> String {
        self.inner.dataset.to_string()
    }
    #[getter]
    fn lambda0(&self) -> f64 {
        self.inner.lambda0
    }
    #[setter]
    fn set_lambda0(&mut self, v: f64) {
        self.inner.lambda0 = v;
    }
    #[getter]
    fn e_attn(&self) -> usize {
        self.inner.e_attn
    }
    #[setter]
    fn set_e_attn(&mut self, v: usize) {
        self.inner.e_attn = v;
    }
    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }
    #[setter]
    fn set_epochs(&mut self, v: usize) {
        self.inner.epochs = v;
    }
    #[getter]
    fn batch_size(&self) -> usize {
        self.inner.batch_size
    }
    #[setter]
    fn set_batch_size(&mut self, v: usize) {
        self.inner.batch_size = v;
    }
    #[getter]
    fn lr(&self) -> f64 {
        self.inner.sgd.initial_lr
    }
    #[setter]
    fn set_lr(&mut self, v: f64) {
        self.inner.sgd.initial_lr = v;
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    fn lambda_at(&self, epoch: usize) -> PyResult<f64> {
        tr::lambda_at(epoch, &self.inner).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "TrainConfig(dataset={}, lambda0={}, e_attn={}, epochs={}, batch_size={}, lr={}, seed={})",
            c.dataset, c.lambda0, c.e_attn, c.epochs, c.batch_size, c.sgd.initial_lr, c.seed
        )
    }
}

/// Network weights.
#[pyclass(module = "attn_align", frozen)]
struct Model {
    params: ModelParams,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            params: load_checkpoint(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.params, &path).map_err(py_err)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.params.num_parameters()
    }

    /// Accuracy on a split and, where oracle teachers apply, the mean KL of
    /// the true-class CAM to the teacher.
    fn evaluate(&self, py: Python<'_>, dataset: &Dataset, split: &str) -> PyResult<(f64, f64)> {
        let exs = dataset.part(split)?;
        let teachers: Vec<Tensor> = exs
            .iter()
            .map(|ex| {
                let t = build_teacher(ex, dataset.split.kind, &MorphParams::default());
                downsample_teacher(&t).map(|d| d.into_grid())
            })
            .collect::<attn_align::Result<_>>()
            .map_err(py_err)?;
        let params = &self.params;
        let r = py
            .detach(|| tr::evaluate(params, exs, Some(&teachers), DEFAULT_CAM_EPS))
            .map_err(py_err)?;
        Ok((r.accuracy, r.mean_attn.unwrap_or(f64::NAN)))
    }

    /// 7×7 CAM (unit sum) for `class`, defaulting to the example's label.
    #[pyo3(signature = (dataset, split, index, class_index=None))]
    fn cam(&self, dataset: &Dataset, split: &str, index: usize, class_index: Option<usize>) -> PyResult<Vec<f64>> {
        let ex = dataset.example(split, index)?;
        let x = Tensor::stack(&[&ex.image]).map_err(py_err)?;
        let (_, feats) = model_infer(&self.params, &x).map_err(py_err)?;
        let s = cam_from_features(&feats, &self.params.head, 0, class_index.unwrap_or(ex.label), DEFAULT_CAM_EPS)
            .map_err(py_err)?;
        Ok(s.grid().data().to_vec())
    }

    /// Logits for one example.
    fn logits(&self, dataset: &Dataset, split: &str, index: usize) -> PyResult<Vec<f64>> {
        let ex = dataset.example(split, index)?;
        let x = Tensor::stack(&[&ex.image]).map_err(py_err)?;
        Ok(model_infer(&self.params, &x).map_err(py_err)?.0.into_data())
    }
}

/// Outcome of a training run.
#[pyclass(module = "attn_align", frozen)]
struct TrainReport {
    report: tr::TrainReport,
}

#[pymethods]
impl TrainReport {
    #[getter]
    fn final_test_acc(&self) -> f64 {
        self.report.final_test_acc
    }
    #[getter]
    fn best_optim_value(&self) -> f64 {
        self.report.best_optim_value
    }

    /// One dict per epoch; `lambda` and `train_ce` are `None` in the
    /// attention phase.
    fn epochs<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.report
            .per_epoch
            .iter()
            .map(|m| {
                let d = PyDict::new(py);
                d.set_item("epoch", m.epoch)?;
                d.set_item("phase", m.phase.to_string())?;
                d.set_item("lambda", m.lambda)?;
                d.set_item("train_ce", m.train_ce)?;
                d.set_item("train_attn", m.train_attn)?;
                d.set_item("val_acc", m.val_acc)?;
                d.set_item("val_attn", m.val_attn)?;
                d.set_item("optim_value", m.optim_value)?;
                d.set_item("lr", m.lr)?;
                Ok(d)
            })
            .collect()
    }

    fn metrics_csv(&self) -> String {
        tr::metrics_csv(&self.report.per_epoch)
    }
}

/// Two-phase training with oracle teachers; returns `(report, model)`.
#[pyfunction]
fn train(py: Python<'_>, config: &TrainConfig, dataset: &Dataset) -> PyResult<(TrainReport, Model)> {
    let cfg = config.inner.clone();
    let split = &dataset.split;
    let run = py
        .detach(|| {
            let teachers = Teachers::oracle(split, &cfg.morph);
            tr::train_two_phase(&cfg, split, &teachers)
        })
        .map_err(py_err)?;
    Ok((TrainReport { report: run.report }, Model { params: run.params }))
}

#[pyfunction]
fn optim_value(val_acc: f64, val_attn: f64) -> f64 {
    tr::optim_value(val_acc, val_attn)
}

/// KL divergence of two equally sized, strictly positive distributions.
#[pyfunction]
fn attention_loss(saliency: Vec<f64>, teacher: Vec<f64>) -> PyResult<f64> {
    let n = saliency.len();
    let s = Tensor::new(vec![n], saliency).map_err(py_err)?;
    let m = Tensor::new(vec![teacher.len()], teacher).map_err(py_err)?;
    Ok(tr::attention_loss(&s, &m).map_err(py_err)?.0)
}

fn mask_from(bits: &[bool], height: usize, width: usize) -> PyResult<BinaryMask> {
    if bits.len() != height * width {
        return Err(PyValueError::new_err(format!("{} bits for {height}x{width}", bits.len())));
    }
    let mut m = BinaryMask::empty(height, width);
    for (i, &b) in bits.iter().enumerate() {
        m.set(i / width, i % width, b);
    }
    Ok(m)
}

fn mask_bits(m: &BinaryMask, height: usize, width: usize) -> Vec<bool> {
    (0..height * width).map(|i| m.get(i / width, i % width)).collect()
}

/// Binary morphology on a row-major mask: `op` is `dilate`, `erode` or `edge_band`.
#[pyfunction]
fn morphology(op: &str, bits: Vec<bool>, height: usize, width: usize, radius: usize) -> PyResult<Vec<bool>> {
    let m = mask_from(&bits, height, width)?;
    let out = match op {
        "dilate" => dilate(&m, radius),
        "erode" => erode(&m, radius),
        "edge_band" if radius >= 1 => edge_band(&m, radius),
        "edge_band" => return Err(PyValueError::new_err("edge_band needs radius >= 1")),
        other => return Err(PyValueError::new_err(format!("unknown op '{other}'"))),
    };
    Ok(mask_bits(&out, height, width))
}

#[pymodule]
#[pyo3(name = "attn_align")]
fn init_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<TrainConfig>()?;
    m.add_class::<Model>()?;
    m.add_class::<TrainReport>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(optim_value, m)?)?;
    m.add_function(wrap_pyfunction!(attention_loss, m)?)?;
    m.add_function(wrap_pyfunction!(morphology, m)?)?;
    Ok(())
}
