use std::f64::consts::PI;

use super::{Gradients, OptimizerKind, Schedule, TrainConfig};
use crate::model::ops::{c, Real};
use crate::model::Parameters;

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;
pub const LION_BETAS: (f64, f64) = (0.9, 0.99);

/// Optimizer moments and the number of steps taken. Lion uses only `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub kind: OptimizerKind,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: usize,
}

impl OptState {
    pub fn new<T: Real>(kind: OptimizerKind, params: &Parameters<T>) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self {
            kind,
            v: if kind == OptimizerKind::Adamw {
                zeros.clone()
            } else {
                Vec::new()
            },
            m: zeros,
            step: 0,
        }
    }
}

/// Learning rate at optimizer step `step` (0-based). Cosine runs from `lr`
/// at step 0 to `lr_floor` at the final step.
pub fn learning_rate(cfg: &TrainConfig, step: usize) -> f64 {
    let total = cfg.total_steps();
    match cfg.schedule {
        Schedule::Constant => cfg.lr,
        Schedule::Cosine if total <= 1 => cfg.lr,
        Schedule::Cosine => {
            let frac = step.min(total - 1) as f64 / (total - 1) as f64;
            cfg.lr_floor + 0.5 * (cfg.lr - cfg.lr_floor) * (1.0 + (PI * frac).cos())
        }
    }
}

fn clip_scale<T: Real>(grads: &Gradients<T>, clip: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > clip {
        clip / norm
    } else {
        1.0
    }
}

/// One AdamW step at the schedule position held in `state`; returns the
/// learning rate used.
pub fn adamw_step<T: Real>(
    params: &mut Parameters<T>,
    grads: &Gradients<T>,
    state: &mut OptState,
    cfg: &TrainConfig,
) -> f64 {
    let lr = learning_rate(cfg, state.step);
    let scale = clip_scale(grads, cfg.clip_norm);
    state.step += 1;
    let (b1, b2) = ADAM_BETAS;
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    let decay = 1.0 - lr * cfg.weight_decay;
    for (ti, t) in params.tensors.iter_mut().enumerate() {
        let g = &grads.tensors[ti].data;
        let m = &mut state.m[ti];
        let v = &mut state.v[ti];
        for j in 0..t.data.len() {
            let gj = g[j].to_f64().unwrap() * scale;
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + ADAM_EPS);
            let p = t.data[j].to_f64().unwrap();
            t.data[j] = c(p * decay - lr * update);
        }
    }
    lr
}

/// One Lion step: `p ← p(1 − lr·wd) − lr·sign(β₁m + (1−β₁)g)`, then
/// `m ← β₂m + (1−β₂)g`.
pub fn lion_step<T: Real>(
    params: &mut Parameters<T>,
    grads: &Gradients<T>,
    state: &mut OptState,
    cfg: &TrainConfig,
) -> f64 {
    let lr = learning_rate(cfg, state.step);
    let scale = clip_scale(grads, cfg.clip_norm);
    state.step += 1;
    let (b1, b2) = LION_BETAS;
    let decay = 1.0 - lr * cfg.weight_decay;
    for (ti, t) in params.tensors.iter_mut().enumerate() {
        let g = &grads.tensors[ti].data;
        let m = &mut state.m[ti];
        for j in 0..t.data.len() {
            let gj = g[j].to_f64().unwrap() * scale;
            let interp = b1 * m[j] + (1.0 - b1) * gj;
            let sign = if interp > 0.0 {
                1.0
            } else if interp < 0.0 {
                -1.0
            } else {
                0.0
            };
            let p = t.data[j].to_f64().unwrap();
            t.data[j] = c(p * decay - lr * sign);
            m[j] = b2 * m[j] + (1.0 - b2) * gj;
        }
    }
    lr
}
