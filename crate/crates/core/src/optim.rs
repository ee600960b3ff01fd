//! Decoupled-weight-decay adaptive optimizer with a linear warmup / linear
//! decay learning-rate schedule and split encoder/decoder learning rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{ParamGroup, ParamSet};
use crate::scalar::Real;

/// Optimizer hyperparameters. `lr_encoder`/`lr_decoder` are the peak rates
/// reached at the end of warmup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    #[serde(default = "default_lr_encoder")]
    pub lr_encoder: f64,
    #[serde(default = "default_lr_decoder")]
    pub lr_decoder: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_warmup_steps")]
    pub warmup_steps: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_lr_encoder() -> f64 {
    6e-5
}
fn default_lr_decoder() -> f64 {
    6e-4
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_warmup_steps() -> usize {
    100
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr_encoder: default_lr_encoder(),
            lr_decoder: default_lr_decoder(),
            weight_decay: default_weight_decay(),
            warmup_steps: default_warmup_steps(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_encoder > 0.0 && self.lr_decoder > 0.0) {
            return Err(Error::InvalidConfig("optim learning rates must be > 0".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("optim.weight_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("optim.beta1/beta2 must lie in [0, 1)".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig("optim.epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// Schedule multiplier in `[0, 1]`: linear ramp over `warmup` steps, then
/// linear decay to zero at `total`. Continuous at `t == warmup`, where it is
/// exactly one.
pub fn lr_schedule(t: usize, warmup: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    if warmup > 0 && t <= warmup {
        t as f64 / warmup as f64
    } else if t >= total {
        0.0
    } else {
        (total - t) as f64 / (total - warmup.min(total)) as f64
    }
}

/// Step counter and first/second moment accumulators, shape-locked to one
/// parameter set.
#[derive(Debug, Clone)]
pub struct OptimState<R> {
    pub config: OptimConfig,
    pub total_steps: usize,
    pub step: usize,
    pub first_moment: ParamSet<R>,
    pub second_moment: ParamSet<R>,
}

impl<R: Real> OptimState<R> {
    pub fn new(config: OptimConfig, total_steps: usize, params: &ParamSet<R>) -> Self {
        OptimState {
            config,
            total_steps,
            step: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
        }
    }

    /// Effective learning rate of a group at step `t` (1-based).
    pub fn effective_lr(&self, group: ParamGroup, t: usize) -> f64 {
        let base = match group {
            ParamGroup::Encoder => self.config.lr_encoder,
            ParamGroup::Decoder => self.config.lr_decoder,
        };
        base * lr_schedule(t, self.config.warmup_steps, self.total_steps)
    }
}

/// One decoupled-weight-decay adaptive update, in place. Increments the step
/// counter exactly once. Non-finite gradients abort with the tensor name
/// rather than being clamped.
pub fn optimizer_step<R: Real>(
    opt: &mut OptimState<R>,
    params: &mut ParamSet<R>,
    grads: &ParamSet<R>,
) -> Result<()> {
    if !params.shape_matches(&opt.first_moment) || !params.shape_matches(grads) {
        return Err(Error::Shape("optimizer state, parameters, and gradients disagree".into()));
    }
    for t in grads.tensors() {
        if let Some(pos) = t.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in parameter '{}' at flat index {pos}",
                t.name
            )));
        }
    }

    opt.step += 1;
    let t = opt.step;
    let b1 = R::from_f64_lossy(opt.config.beta1);
    let b2 = R::from_f64_lossy(opt.config.beta2);
    let eps = R::from_f64_lossy(opt.config.epsilon);
    let wd = R::from_f64_lossy(opt.config.weight_decay);
    let bias1 = R::from_f64_lossy(1.0 - opt.config.beta1.powi(t as i32));
    let bias2 = R::from_f64_lossy(1.0 - opt.config.beta2.powi(t as i32));
    let one = R::one();

    for ti in 0..params.len() {
        let group = params.tensors()[ti].group;
        let lr = R::from_f64_lossy(opt.effective_lr(group, t));
        let p = &mut params.tensors_mut()[ti].data;
        let g = &grads.tensors()[ti].data;
        let m = &mut opt.first_moment.tensors_mut()[ti].data;
        let v = &mut opt.second_moment.tensors_mut()[ti].data;
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] = p[i] - lr * (m_hat / (v_hat.sqrt() + eps)) - lr * wd * p[i];
        }
    }
    Ok(())
}
