use std::fmt;
use std::path::PathBuf;

use rayon::prelude::*;

use crate::data::{BiasedExample, DatasetKind, DatasetSplit};
use crate::error::{Error, Result};
use crate::nn::{cam_from_features, model_backward, model_forward, model_infer, ModelParams, DEFAULT_CAM_EPS};
use crate::optim::{SgdConfig, SgdState};
use crate::teacher::{build_teacher, downsample_teacher, MorphParams, TeacherMap};
use crate::tensor::{argmax, SeededRng, Tensor};

use super::loss::{attention_loss, cross_entropy, optim_value};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    pub lambda0: f64,
    /// First epoch of the joint phase; epochs before it optimize the
    /// attention loss alone.
    pub e_attn: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub seed: u64,
    pub morph: MorphParams,
    /// ε floor of the CAM distribution inside the KL term.
    pub eps_kl: f64,
}

impl TrainConfig {
    /// Selected settings: λ=160, E_attn=11, lr 1e-3 for ColoredMNIST;
    /// λ=8, E_attn=13, lr 1e-2 for DecoyMNIST. Both 30 epochs, batch 32.
    pub fn selected(dataset: DatasetKind) -> Self {
        let (lambda0, e_attn, lr) = match dataset {
            DatasetKind::Colored => (160.0, 11, 1e-3),
            DatasetKind::Decoy => (8.0, 13, 1e-2),
        };
        TrainConfig {
            dataset,
            lambda0,
            e_attn,
            epochs: 30,
            batch_size: 32,
            sgd: SgdConfig::with_lr(lr),
            seed: 0,
            morph: MorphParams::default(),
            eps_kl: DEFAULT_CAM_EPS,
        }
    }

    /// Cross-entropy only (λ0 = 0, E_attn = 0).
    pub fn baseline(dataset: DatasetKind) -> Self {
        TrainConfig {
            lambda0: 0.0,
            e_attn: 0,
            ..Self::selected(dataset)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        self.morph.validate()?;
        if self.e_attn > self.epochs {
            return Err(Error::Config(format!("e_attn {} exceeds epochs {}", self.e_attn, self.epochs)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lambda0 >= 0.0) || !self.lambda0.is_finite() {
            return Err(Error::Config(format!("lambda0 {} must be nonnegative", self.lambda0)));
        }
        if !(self.eps_kl > 0.0) {
            return Err(Error::Config(format!("eps_kl {} must be positive", self.eps_kl)));
        }
        Ok(())
    }

    pub fn phase_of(&self, epoch: usize) -> Phase {
        if epoch < self.e_attn {
            Phase::Attention
        } else {
            Phase::Joint
        }
    }
}

/// `λ_e = λ0 · (1 + 0.1 · (e − E_attn))` for joint-phase epochs.
///
/// Closed form of the ramp `λ_{e+1} = λ_e + 0.1 λ0`, `λ_{E_attn} = λ0`.
pub fn lambda_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch < cfg.e_attn {
        return Err(Error::Config(format!(
            "epoch {epoch} is in the attention phase (E_attn = {}); λ is undefined",
            cfg.e_attn
        )));
    }
    Ok(cfg.lambda0 * (1.0 + 0.1 * (epoch - cfg.e_attn) as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Attention,
    Joint,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Attention => "attention",
            Phase::Joint => "joint",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: Phase,
    /// Only defined in the joint phase.
    pub lambda: Option<f64>,
    /// Not computed during the attention phase.
    pub train_ce: Option<f64>,
    pub train_attn: f64,
    pub val_acc: f64,
    pub val_attn: f64,
    pub optim_value: f64,
    /// Learning rate used for this epoch's steps.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub per_epoch: Vec<EpochMetrics>,
    pub final_test_acc: f64,
    pub final_test_attn: Option<f64>,
    pub best_optim_value: f64,
    pub checkpoint_path: Option<PathBuf>,
}

/// Downsampled 7×7 teacher grids aligned with each split.
#[derive(Clone, Debug)]
pub struct Teachers {
    pub train: Vec<Tensor>,
    pub val: Vec<Tensor>,
    pub test: Option<Vec<Tensor>>,
}

fn to_grid(map: &TeacherMap) -> Result<Tensor> {
    match map.side() {
        (7, 7) => Ok(map.grid().clone()),
        _ => Ok(downsample_teacher(map)?.into_grid()),
    }
}

impl Teachers {
    /// Oracle teachers for every split.
    pub fn oracle(split: &DatasetSplit, morph: &MorphParams) -> Teachers {
        let build = |exs: &[BiasedExample]| -> Vec<Tensor> {
            exs.par_iter()
                .map(|ex| to_grid(&build_teacher(ex, split.kind, morph)).expect("oracle maps are 28x28"))
                .collect()
        };
        Teachers {
            train: build(&split.train),
            val: build(&split.val),
            test: Some(build(&split.test)),
        }
    }

    /// Maps at 28×28 (downsampled here) or already at 7×7.
    pub fn from_maps(train: &[TeacherMap], val: &[TeacherMap], test: Option<&[TeacherMap]>) -> Result<Teachers> {
        let conv = |maps: &[TeacherMap]| maps.iter().map(to_grid).collect::<Result<Vec<_>>>();
        Ok(Teachers {
            train: conv(train)?,
            val: conv(val)?,
            test: test.map(conv).transpose()?,
        })
    }

    pub fn check_against(&self, split: &DatasetSplit) -> Result<()> {
        let check = |name: &str, t: usize, e: usize| {
            if t == e {
                Ok(())
            } else {
                Err(Error::Config(format!("{name}: {t} teacher maps for {e} examples")))
            }
        };
        check("train", self.train.len(), split.train.len())?;
        check("val", self.val.len(), split.val.len())?;
        if let Some(test) = &self.test {
            check("test", test.len(), split.test.len())?;
        }
        Ok(())
    }
}

/// Observation points inside [`train_two_phase_observed`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    /// Optimizer/scheduler reset at the phase boundary.
    Reset {
        epoch: usize,
        params_before: &'a ModelParams,
        params_after: &'a ModelParams,
        state: &'a SgdState,
    },
    /// Emitted just before each optimizer step.
    Step {
        epoch: usize,
        batch: usize,
        phase: Phase,
        lambda: Option<f64>,
        state: &'a SgdState,
    },
    EpochEnd(&'a EpochMetrics),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub mean_attn: Option<f64>,
}

const EVAL_CHUNK: usize = 100;

/// Accuracy (argmax, ties to the smallest class) and the mean KL of the
/// true-class CAM against `teachers` when given.
pub fn evaluate(params: &ModelParams, examples: &[BiasedExample], teachers: Option<&[Tensor]>, eps: f64) -> Result<EvalResult> {
    if let Some(t) = teachers {
        if t.len() != examples.len() {
            return Err(Error::Config(format!("{} teachers for {} examples", t.len(), examples.len())));
        }
    }
    if examples.is_empty() {
        return Err(Error::Config("cannot evaluate an empty example set".into()));
    }
    let per_chunk: Vec<(usize, Vec<f64>)> = examples
        .par_chunks(EVAL_CHUNK)
        .enumerate()
        .map(|(ci, chunk)| -> Result<(usize, Vec<f64>)> {
            let x = Tensor::stack(&chunk.iter().map(|e| &e.image).collect::<Vec<_>>())?;
            let (logits, features) = model_infer(params, &x)?;
            let mut correct = 0;
            let mut kls = Vec::new();
            for (i, ex) in chunk.iter().enumerate() {
                if argmax(&logits.data()[i * 10..(i + 1) * 10]) == ex.label {
                    correct += 1;
                }
                if let Some(t) = teachers {
                    let s = cam_from_features(&features, &params.head, i, ex.label, eps)?;
                    kls.push(attention_loss(s.grid(), &t[ci * EVAL_CHUNK + i])?.0);
                }
            }
            Ok((correct, kls))
        })
        .collect::<Result<_>>()?;
    let correct: usize = per_chunk.iter().map(|(c, _)| c).sum();
    let mean_attn = teachers.map(|_| {
        let total: f64 = per_chunk.iter().flat_map(|(_, k)| k.iter()).sum();
        total / examples.len() as f64
    });
    Ok(EvalResult {
        accuracy: correct as f64 / examples.len() as f64,
        mean_attn,
    })
}

/// Result of one training run.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub report: TrainReport,
    pub params: ModelParams,
}

pub fn train_two_phase(cfg: &TrainConfig, split: &DatasetSplit, teachers: &Teachers) -> Result<TrainRun> {
    train_two_phase_observed(cfg, split, teachers, &mut |_| {})
}

struct BatchLosses {
    ce: Option<f64>,
    attn: f64,
}

/// Forward, losses, and backward for one minibatch; returns the gradients.
fn batch_gradients(
    params: &ModelParams,
    examples: &[&BiasedExample],
    teachers: &[&Tensor],
    lambda: Option<f64>,
    eps: f64,
    grads: &mut ModelParams,
) -> Result<BatchLosses> {
    let b = examples.len();
    let x = Tensor::stack(&examples.iter().map(|e| &e.image).collect::<Vec<_>>())?;
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let (logits, cache) = model_forward(params, &x)?;

    let (ce, d_logits) = match lambda {
        Some(_) => {
            let (l, d) = cross_entropy(&logits, &labels)?;
            (Some(l), Some(d))
        }
        None => (None, None),
    };
    // Attention-only phase weighs the KL term by 1.
    let attn_weight = lambda.unwrap_or(1.0);
    let mut d_features = Tensor::zeros_like(&cache.features);
    let mut attn_total = 0.0;
    for (i, (&y, t)) in labels.iter().zip(teachers).enumerate() {
        let s = cam_from_features(&cache.features, &params.head, i, y, eps)?;
        let (kl, mut d_s) = attention_loss(s.grid(), t)?;
        attn_total += kl;
        if attn_weight != 0.0 {
            let scale = attn_weight / b as f64;
            d_s.data_mut().iter_mut().for_each(|g| *g *= scale);
            s.backward(&cache.features, &params.head, d_s.data(), &mut d_features, &mut grads.head.weights)?;
        }
    }
    let d_feat = (attn_weight != 0.0).then_some(&d_features);
    model_backward(params, &cache, d_logits.as_ref(), d_feat, grads)?;
    Ok(BatchLosses {
        ce,
        attn: attn_total / b as f64,
    })
}

/// Joint objective `CE + λ·KL` (or KL alone when `lambda` is `None`) and its
/// gradient for a batch; exposed for gradient checks.
pub fn objective_and_gradient(
    params: &ModelParams,
    examples: &[&BiasedExample],
    teachers: &[&Tensor],
    lambda: Option<f64>,
    eps: f64,
) -> Result<(f64, ModelParams)> {
    let mut grads = ModelParams::zeros();
    let l = batch_gradients(params, examples, teachers, lambda, eps, &mut grads)?;
    let value = l.ce.unwrap_or(0.0) + lambda.unwrap_or(1.0) * l.attn;
    Ok((value, grads))
}

/// Objective value only (no backward pass).
pub fn objective_value(
    params: &ModelParams,
    examples: &[&BiasedExample],
    teachers: &[&Tensor],
    lambda: Option<f64>,
    eps: f64,
) -> Result<f64> {
    let x = Tensor::stack(&examples.iter().map(|e| &e.image).collect::<Vec<_>>())?;
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let (logits, features) = model_infer(params, &x)?;
    let mut attn = 0.0;
    for (i, (&y, t)) in labels.iter().zip(teachers).enumerate() {
        let s = cam_from_features(&features, &params.head, i, y, eps)?;
        attn += attention_loss(s.grid(), t)?.0;
    }
    attn /= examples.len() as f64;
    Ok(match lambda {
        Some(l) => cross_entropy(&logits, &labels)?.0 + l * attn,
        None => attn,
    })
}

/// Two-phase training.
///
/// Epochs `[0, E_attn)` minimize the attention loss alone. At `E_attn` the
/// optimizer momentum and LR schedule are reset (weights untouched), and the
/// remaining epochs minimize `CE + λ_e · KL` with the λ ramp. Validation
/// metrics are taken at the end of every epoch; test accuracy uses the
/// final-epoch weights.
pub fn train_two_phase_observed(
    cfg: &TrainConfig,
    split: &DatasetSplit,
    teachers: &Teachers,
    observer: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<TrainRun> {
    cfg.validate()?;
    teachers.check_against(split)?;
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(Error::Config("train, val, and test splits must be nonempty".into()));
    }
    let root = SeededRng::new(cfg.seed);
    let mut params = ModelParams::init(&mut root.child("init"));
    let mut shuffle_rng = root.child("shuffle");
    let mut opt = SgdState::new(&cfg.sgd);
    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..split.train.len()).collect();

    for epoch in 0..cfg.epochs {
        let phase = cfg.phase_of(epoch);
        if epoch == cfg.e_attn {
            let before = params.clone();
            opt.reset(&cfg.sgd);
            observer(TrainEvent::Reset {
                epoch,
                params_before: &before,
                params_after: &params,
                state: &opt,
            });
        }
        let lambda = match phase {
            Phase::Joint => Some(lambda_at(epoch, cfg)?),
            Phase::Attention => None,
        };
        let lr = opt.current_lr();
        order.sort_unstable();
        shuffle_rng.shuffle(&mut order);

        let (mut ce_sum, mut attn_sum) = (0.0, 0.0);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let exs: Vec<&BiasedExample> = idx.iter().map(|&i| &split.train[i]).collect();
            let ts: Vec<&Tensor> = idx.iter().map(|&i| &teachers.train[i]).collect();
            let mut grads = ModelParams::zeros();
            let losses = batch_gradients(&params, &exs, &ts, lambda, cfg.eps_kl, &mut grads).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("{m} at epoch {epoch}, batch {bi} (examples {idx:?})")),
                other => other,
            })?;
            let total = losses.ce.unwrap_or(0.0) + lambda.unwrap_or(1.0) * losses.attn;
            if !total.is_finite() || !grads.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss {total} at epoch {epoch}, batch {bi} (examples {idx:?})"
                )));
            }
            ce_sum += losses.ce.unwrap_or(0.0) * idx.len() as f64;
            attn_sum += losses.attn * idx.len() as f64;
            observer(TrainEvent::Step {
                epoch,
                batch: bi,
                phase,
                lambda,
                state: &opt,
            });
            opt.step(&mut params, &grads, &cfg.sgd)?;
            if !params.is_finite() {
                return Err(Error::Numerical(format!(
                    "weights diverged after the update at epoch {epoch}, batch {bi} (examples {idx:?})"
                )));
            }
        }
        let n = split.train.len() as f64;
        let val = evaluate(&params, &split.val, Some(&teachers.val), cfg.eps_kl).map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!(
                "{m} in validation after epoch {epoch} (last update: batch {})",
                order.len().div_ceil(cfg.batch_size) - 1
            )),
            other => other,
        })?;
        let val_attn = val.mean_attn.expect("val teachers present");
        let metrics = EpochMetrics {
            epoch,
            phase,
            lambda,
            train_ce: lambda.map(|_| ce_sum / n),
            train_attn: attn_sum / n,
            val_acc: val.accuracy,
            val_attn,
            optim_value: optim_value(val.accuracy, val_attn),
            lr,
        };
        log::info!(
            "epoch {epoch:2} {phase:9} lr={lr:.2e} λ={} ce={} attn={:.4} val_acc={:.4} val_attn={:.4} optim={:.4}",
            lambda.map_or("-".into(), |l| format!("{l:.2}")),
            metrics.train_ce.map_or("-".into(), |c| format!("{c:.4}")),
            metrics.train_attn,
            metrics.val_acc,
            metrics.val_attn,
            metrics.optim_value
        );
        observer(TrainEvent::EpochEnd(&metrics));
        per_epoch.push(metrics);
        opt.epoch_tick(&cfg.sgd);
    }

    let test = evaluate(&params, &split.test, teachers.test.as_deref(), cfg.eps_kl)?;
    let best_optim_value = per_epoch
        .iter()
        .map(|m| m.optim_value)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(TrainRun {
        report: TrainReport {
            config: cfg.clone(),
            per_epoch,
            final_test_acc: test.accuracy,
            final_test_attn: test.mean_attn,
            best_optim_value,
            checkpoint_path: None,
        },
        params,
    })
}

/// Mean and sample standard deviation (N − 1) of final test accuracy.
pub fn aggregate_seeds(reports: &[TrainReport]) -> Result<(f64, f64)> {
    let accs: Vec<f64> = reports.iter().map(|r| r.final_test_acc).collect();
    mean_and_sample_sd(&accs)
}

pub fn mean_and_sample_sd(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Config(format!("need at least 2 values, got {}", values.len())));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}
