//! Flat `key = value` run configuration.
//!
//! ```text
//! # ColoredMNIST, selected cell
//! dataset = colored
//! lambda0 = 160
//! e_attn  = 11
//! train_images = data/mnist/train-images-idx3-ubyte.gz
//! ```
//!
//! Lists are comma separated. Unset keys take their defaults; `lr` defaults
//! to 1e-3 for `colored` and 1e-2 for `decoy`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{DatasetKind, SynthOptions};
use crate::error::{Error, Result};
use crate::training::TrainConfig;

pub const KEYS: &[&str] = &[
    "dataset",
    "lambda0",
    "e_attn",
    "epochs",
    "batch_size",
    "lr",
    "momentum",
    "weight_decay",
    "lr_decay",
    "lr_decay_every",
    "seed",
    "seeds",
    "eps_kl",
    "threshold",
    "dilation_radius",
    "edge_band",
    "teacher_eps",
    "val_fraction",
    "train_limit",
    "test_limit",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "out",
    "external_teachers",
    "export_count",
    "write_teacher_bundles",
    "grid_lambdas",
    "grid_e_attns",
    "checkpoint",
    "baseline_checkpoint",
    "aligned_checkpoint",
    "saliency_count",
];

/// MNIST IDX inputs (raw or gzip).
#[derive(Clone, Debug, PartialEq)]
pub struct MnistPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Extra seeds for replicate runs; empty means just `train.seed`.
    pub seeds: Vec<u64>,
    pub synth: SynthOptions,
    pub mnist: Option<MnistPaths>,
    pub out: PathBuf,
    /// Directory holding `train.attn`, `val.attn` and optionally `test.attn`.
    pub external_teachers: Option<PathBuf>,
    pub export_count: usize,
    pub write_teacher_bundles: bool,
    pub grid_lambdas: Vec<f64>,
    pub grid_e_attns: Vec<usize>,
    pub checkpoint: Option<PathBuf>,
    pub baseline_checkpoint: Option<PathBuf>,
    pub aligned_checkpoint: Option<PathBuf>,
    pub saliency_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::selected(DatasetKind::Colored),
            seeds: Vec::new(),
            synth: SynthOptions::default(),
            mnist: None,
            out: PathBuf::from("out"),
            external_teachers: None,
            export_count: 16,
            write_teacher_bundles: false,
            grid_lambdas: vec![1.0, 2.0, 4.0, 8.0, 16.0, 40.0, 80.0, 160.0, 320.0],
            grid_e_attns: vec![5, 7, 9, 11, 13, 15],
            checkpoint: None,
            baseline_checkpoint: None,
            aligned_checkpoint: None,
            saliency_count: 9,
        }
    }
}

fn type_err(line: usize, key: &str, what: &str, raw: &str) -> Error {
    Error::Config(format!("line {line}: expected {what} for '{key}', got '{raw}'"))
}

fn number<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| type_err(line, key, "number", raw))
}

fn list<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| type_err(line, key, "number list", raw)))
        .collect()
}

fn boolean(line: usize, key: &str, raw: &str) -> Result<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(type_err(line, key, "boolean", raw)),
    }
}

fn limit(line: usize, key: &str, raw: &str) -> Result<Option<usize>> {
    if raw.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        number(line, key, raw).map(Some)
    }
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    let mut unknown = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {line}: expected 'key = value'")))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if !KEYS.contains(&k.as_str()) {
            unknown.push(format!("{k} (line {line})"));
            continue;
        }
        if let Some((prev, ..)) = entries.iter().find(|(_, key, _)| *key == k) {
            return Err(Error::Config(format!("line {line}: '{k}' already set on line {prev}")));
        }
        entries.push((line, k, v));
    }
    if !unknown.is_empty() {
        return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
    }

    // The dataset decides the defaults for the rest.
    let dataset = match entries.iter().find(|(_, k, _)| k == "dataset") {
        Some((line, _, v)) => v.parse::<DatasetKind>().map_err(|_| type_err(*line, "dataset", "colored|decoy", v))?,
        None => DatasetKind::Colored,
    };
    let mut cfg = RunConfig {
        train: TrainConfig::selected(dataset),
        ..RunConfig::default()
    };
    let mut paths: [Option<PathBuf>; 4] = Default::default();
    let t = &mut cfg.train;
    for (line, key, v) in &entries {
        let line = *line;
        let key = key.as_str();
        let v = v.as_str();
        match key {
            "dataset" => {}
            "lambda0" => t.lambda0 = number(line, key, v)?,
            "e_attn" => t.e_attn = number(line, key, v)?,
            "epochs" => t.epochs = number(line, key, v)?,
            "batch_size" => t.batch_size = number(line, key, v)?,
            "lr" => t.sgd.initial_lr = number(line, key, v)?,
            "momentum" => t.sgd.momentum = number(line, key, v)?,
            "weight_decay" => t.sgd.weight_decay = number(line, key, v)?,
            "lr_decay" => t.sgd.decay_factor = number(line, key, v)?,
            "lr_decay_every" => t.sgd.decay_every_epochs = number(line, key, v)?,
            "seed" => t.seed = number(line, key, v)?,
            "seeds" => cfg.seeds = list(line, key, v)?,
            "eps_kl" => t.eps_kl = number(line, key, v)?,
            "threshold" => t.morph.threshold = number(line, key, v)?,
            "dilation_radius" => t.morph.dilation_radius = number(line, key, v)?,
            "edge_band" => t.morph.edge_band = boolean(line, key, v)?,
            "teacher_eps" => t.morph.eps = number(line, key, v)?,
            "val_fraction" => cfg.synth.val_fraction = number(line, key, v)?,
            "train_limit" => cfg.synth.train_limit = limit(line, key, v)?,
            "test_limit" => cfg.synth.test_limit = limit(line, key, v)?,
            "train_images" => paths[0] = Some(v.into()),
            "train_labels" => paths[1] = Some(v.into()),
            "test_images" => paths[2] = Some(v.into()),
            "test_labels" => paths[3] = Some(v.into()),
            "out" => cfg.out = v.into(),
            "external_teachers" => cfg.external_teachers = Some(v.into()),
            "export_count" => cfg.export_count = number(line, key, v)?,
            "write_teacher_bundles" => cfg.write_teacher_bundles = boolean(line, key, v)?,
            "grid_lambdas" => cfg.grid_lambdas = list(line, key, v)?,
            "grid_e_attns" => cfg.grid_e_attns = list(line, key, v)?,
            "checkpoint" => cfg.checkpoint = Some(v.into()),
            "baseline_checkpoint" => cfg.baseline_checkpoint = Some(v.into()),
            "aligned_checkpoint" => cfg.aligned_checkpoint = Some(v.into()),
            "saliency_count" => cfg.saliency_count = number(line, key, v)?,
            other => unreachable!("key list out of sync: {other}"),
        }
    }
    cfg.mnist = match paths {
        [None, None, None, None] => None,
        [Some(a), Some(b), Some(c), Some(d)] => Some(MnistPaths {
            train_images: a,
            train_labels: b,
            test_images: c,
            test_labels: d,
        }),
        _ => {
            return Err(Error::Config(
                "train_images, train_labels, test_images and test_labels must be set together".into(),
            ))
        }
    };
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    /// Fully resolved configuration in the same `key = value` syntax.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("dataset", t.dataset.to_string());
        kv("lambda0", t.lambda0.to_string());
        kv("e_attn", t.e_attn.to_string());
        kv("epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("lr", t.sgd.initial_lr.to_string());
        kv("momentum", t.sgd.momentum.to_string());
        kv("weight_decay", t.sgd.weight_decay.to_string());
        kv("lr_decay", t.sgd.decay_factor.to_string());
        kv("lr_decay_every", t.sgd.decay_every_epochs.to_string());
        kv("seed", t.seed.to_string());
        if !self.seeds.is_empty() {
            kv("seeds", join(&self.seeds));
        }
        kv("eps_kl", t.eps_kl.to_string());
        kv("threshold", t.morph.threshold.to_string());
        kv("dilation_radius", t.morph.dilation_radius.to_string());
        kv("edge_band", t.morph.edge_band.to_string());
        kv("teacher_eps", t.morph.eps.to_string());
        kv("val_fraction", self.synth.val_fraction.to_string());
        let lim = |l: Option<usize>| l.map_or("none".to_string(), |n| n.to_string());
        kv("train_limit", lim(self.synth.train_limit));
        kv("test_limit", lim(self.synth.test_limit));
        if let Some(m) = &self.mnist {
            kv("train_images", m.train_images.display().to_string());
            kv("train_labels", m.train_labels.display().to_string());
            kv("test_images", m.test_images.display().to_string());
            kv("test_labels", m.test_labels.display().to_string());
        }
        kv("out", self.out.display().to_string());
        let opt_path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        if let Some(p) = opt_path(&self.external_teachers) {
            kv("external_teachers", p);
        }
        kv("export_count", self.export_count.to_string());
        kv("write_teacher_bundles", self.write_teacher_bundles.to_string());
        kv("grid_lambdas", join(&self.grid_lambdas));
        kv("grid_e_attns", join(&self.grid_e_attns));
        for (k, p) in [
            ("checkpoint", &self.checkpoint),
            ("baseline_checkpoint", &self.baseline_checkpoint),
            ("aligned_checkpoint", &self.aligned_checkpoint),
        ] {
            if let Some(p) = opt_path(p) {
                kv(k, p);
            }
        }
        kv("saliency_count", self.saliency_count.to_string());
        s
    }

    pub fn mnist_paths(&self) -> Result<&MnistPaths> {
        self.mnist
            .as_ref()
            .ok_or_else(|| Error::Config("MNIST paths unset (train_images, train_labels, test_images, test_labels)".into()))
    }

    /// Checks every referenced input file exists before any work starts.
    pub fn check_inputs(&self, need_mnist: bool, extra: &[(&str, &Option<PathBuf>)]) -> Result<()> {
        let mut missing = Vec::new();
        if need_mnist {
            let m = self.mnist_paths()?;
            for p in [&m.train_images, &m.train_labels, &m.test_images, &m.test_labels] {
                if !p.is_file() {
                    missing.push(p.display().to_string());
                }
            }
            if let Some(dir) = &self.external_teachers {
                for name in ["train.attn", "val.attn"] {
                    if !dir.join(name).is_file() {
                        missing.push(dir.join(name).display().to_string());
                    }
                }
            }
        }
        for (key, p) in extra {
            match p {
                None => return Err(Error::Config(format!("'{key}' must be set"))),
                Some(p) if !p.is_file() => missing.push(p.display().to_string()),
                Some(_) => {}
            }
        }
        match missing.first() {
            None => Ok(()),
            Some(first) => Err(Error::io(
                first,
                std::io::Error::new(std::io::ErrorKind::NotFound, format!("missing input files: {}", missing.join(", "))),
            )),
        }
    }

    /// Creates the output directory and writes `resolved_config.txt`.
    pub fn prepare_output(&self) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let p = self.out.join("resolved_config.txt");
        fs::write(&p, self.to_text()).map_err(|e| Error::io(&p, e))
    }
}
