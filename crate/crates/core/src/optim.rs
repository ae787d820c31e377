//! Heavy-ball SGD with coupled weight decay and a step-decay schedule that
//! can be restarted mid-training.

use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub initial_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_factor: f64,
    pub decay_every_epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            initial_lr: 1e-3,
            momentum: 0.98,
            weight_decay: 1e-4,
            decay_factor: 0.1,
            decay_every_epochs: 7,
        }
    }
}

impl SgdConfig {
    pub fn with_lr(initial_lr: f64) -> Self {
        SgdConfig {
            initial_lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_lr > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0
            && self.decay_factor > 0.0
            && self.decay_every_epochs > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid SGD configuration {self:?}")))
        }
    }

    /// `initial_lr · decay_factor^floor(epochs / decay_every_epochs)`
    pub fn lr_after(&self, epochs_since_reset: usize) -> f64 {
        let steps = (epochs_since_reset / self.decay_every_epochs) as i32;
        self.initial_lr * self.decay_factor.powi(steps)
    }
}

#[derive(Clone, Debug)]
pub struct SgdState {
    velocity: ModelParams,
    epochs_since_reset: usize,
    current_lr: f64,
}

impl SgdState {
    pub fn new(cfg: &SgdConfig) -> Self {
        SgdState {
            velocity: ModelParams::zeros(),
            epochs_since_reset: 0,
            current_lr: cfg.initial_lr,
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.current_lr
    }

    pub fn epochs_since_reset(&self) -> usize {
        self.epochs_since_reset
    }

    pub fn velocity(&self) -> &ModelParams {
        &self.velocity
    }

    pub fn velocity_norm(&self) -> f64 {
        self.velocity
            .tensors()
            .iter()
            .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// One update: `g' = g + wd·θ; v ← μ·v + g'; θ ← θ − lr·v`.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, cfg: &SgdConfig) -> Result<()> {
        let lr = self.current_lr;
        for ((p, g), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.velocity.tensors_mut())
        {
            step_tensor(p, g, v, lr, cfg)?;
        }
        Ok(())
    }

    /// Call once per completed epoch.
    pub fn epoch_tick(&mut self, cfg: &SgdConfig) {
        self.epochs_since_reset += 1;
        self.current_lr = cfg.lr_after(self.epochs_since_reset);
    }

    /// Zero momentum and restart the schedule; parameters are not touched.
    pub fn reset(&mut self, cfg: &SgdConfig) {
        for v in self.velocity.tensors_mut() {
            v.fill(0.0);
        }
        self.epochs_since_reset = 0;
        self.current_lr = cfg.initial_lr;
    }
}

fn step_tensor(p: &mut Tensor, g: &Tensor, v: &mut Tensor, lr: f64, cfg: &SgdConfig) -> Result<()> {
    if p.shape() != g.shape() || p.shape() != v.shape() {
        return Err(Error::dim(format!(
            "sgd step: param {:?}, grad {:?}",
            p.shape(),
            g.shape()
        )));
    }
    for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
        let g_decayed = gv + cfg.weight_decay * *pv;
        *vv = cfg.momentum * *vv + g_decayed;
        *pv -= lr * *vv;
    }
    Ok(())
}
