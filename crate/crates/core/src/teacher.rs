//! Teacher side of self-training: EMA parameter tracking, pseudo-label
//! generation, and the per-image pseudo-label quality scalar.

use crate::error::{Error, Result};
use crate::net::{forward_logits, NetConfig, ParamSet};
use crate::ops::{argmax_labels, softmax_channels};
use crate::raster::{Image, LabelMap, ProbMap};
use crate::scalar::Real;

/// Teacher parameters tracked as an exponential moving average of the
/// student's. The teacher never receives gradient updates.
#[derive(Debug, Clone)]
pub struct TeacherState<R> {
    params: ParamSet<R>,
    alpha: f64,
    steps_seen: usize,
}

impl<R: Real> TeacherState<R> {
    /// Initializes the teacher as a copy of the student, which makes
    /// `alpha = 1` (frozen teacher) meaningful from step zero.
    pub fn new(student: &ParamSet<R>, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidConfig(format!("ema alpha {alpha} outside [0, 1]")));
        }
        Ok(TeacherState { params: student.clone(), alpha, steps_seen: 0 })
    }

    pub fn params(&self) -> &ParamSet<R> {
        &self.params
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn steps_seen(&self) -> usize {
        self.steps_seen
    }

    /// Rebuilds a teacher from checkpointed tensors.
    pub fn from_parts(params: ParamSet<R>, alpha: f64, steps_seen: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidConfig(format!("ema alpha {alpha} outside [0, 1]")));
        }
        Ok(TeacherState { params, alpha, steps_seen })
    }

    /// Elementwise EMA update `phi = alpha * phi + (1 - alpha) * theta`,
    /// called once per training step after the student's optimizer step.
    pub fn ema_update(&mut self, student: &ParamSet<R>) -> Result<()> {
        if !self.params.shape_matches(student) {
            return Err(Error::Shape("teacher and student parameter sets disagree".into()));
        }
        let a = R::from_f64_lossy(self.alpha);
        let b = R::from_f64_lossy(1.0 - self.alpha);
        for (phi, theta) in self.params.tensors_mut().iter_mut().zip(student.tensors()) {
            for (p, &t) in phi.data.iter_mut().zip(&theta.data) {
                *p = a * *p + b * t;
            }
        }
        self.steps_seen += 1;
        Ok(())
    }

    /// Teacher inference on a target image: hard pseudo-labels plus the
    /// softmax probabilities the quality scalar is computed from. No gradient
    /// bookkeeping is performed.
    pub fn pseudo_label(&self, cfg: &NetConfig, x_t: &Image<R>) -> Result<(LabelMap, ProbMap<R>)> {
        let logits = forward_logits(cfg, &self.params, x_t)?;
        let probs = softmax_channels(&logits)?;
        Ok((argmax_labels(&probs), probs))
    }
}

/// Fraction of pixels whose top class probability strictly surpasses
/// `delta`. This is the per-image pseudo-label quality scalar in `[0, 1]`.
pub fn quality_scalar<R: Real>(probs: &ProbMap<R>, delta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidConfig(format!("quality threshold {delta} outside [0, 1]")));
    }
    let (h, w) = (probs.height(), probs.width());
    let mut confident = 0usize;
    for y in 0..h {
        for x in 0..w {
            let max = probs
                .pixel(y, x)
                .iter()
                .fold(R::zero(), |acc, &v| if v > acc { v } else { acc });
            if max.to_f64_lossy() > delta {
                confident += 1;
            }
        }
    }
    Ok(confident as f64 / (h * w) as f64)
}
