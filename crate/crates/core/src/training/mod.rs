//! Losses, reverse-mode gradients, optimizers, augmentation and the
//! fresh-data training loop.

mod augment;
mod gradcheck;
mod optim;
mod trainer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::defects::Batch;
use crate::error::{Error, Result};
use crate::model::ops::{c, sigmoid, softplus, Real};
use crate::model::{
    backward_sequence, forward_sequence, row_input, Parameters, Predictions, Tensor,
};
use crate::noise::derive_seed;

pub use augment::mask_features;
pub use gradcheck::{gradcheck, gradcheck_batch, random_batch, GradcheckReport, REL_FLOOR};
pub use optim::{adamw_step, learning_rate, lion_step, OptState, ADAM_BETAS, ADAM_EPS, LION_BETAS};
pub use trainer::{
    train, train_with_progress, validation_set, write_history_csv, HistoryRow, TrainOutcome,
    TRAIN_DOMAIN, VAL_DOMAIN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adamw,
    Lion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Cosine annealing from `lr` to `lr_floor` over all steps.
    Cosine,
    Constant,
}

/// Stage of the round curriculum: from `step` on, shots use up to
/// `max_rounds` noisy rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumStage {
    pub max_rounds: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub lr_floor: f64,
    pub schedule: Schedule,
    pub epochs: usize,
    pub samples_per_epoch: usize,
    pub batch_size: usize,
    /// Physical error rates; each batch draws one uniformly.
    pub train_p: Vec<f64>,
    pub seed: u64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub mask_prob: f64,
    pub mask_fraction: f64,
    #[serde(default)]
    pub ema_decay: Option<f64>,
    #[serde(default)]
    pub curriculum: Option<Vec<CurriculumStage>>,
    /// Noisy rounds for phenomenological noise when no curriculum is set.
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    pub val_p: f64,
    pub val_shots: usize,
    /// Validate every this many optimizer steps (and after the last one).
    pub val_every: usize,
}

fn default_rounds() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adamw,
            lr: 1e-4,
            lr_floor: 1e-6,
            schedule: Schedule::Cosine,
            epochs: 1,
            samples_per_epoch: 25_600,
            batch_size: 256,
            train_p: vec![0.05],
            seed: 1,
            weight_decay: 1e-2,
            clip_norm: 1.0,
            mask_prob: 0.0,
            mask_fraction: 0.5,
            ema_decay: None,
            curriculum: None,
            rounds: 1,
            val_p: 0.05,
            val_shots: 10_000,
            val_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.samples_per_epoch == 0 {
            return bad("batch_size and samples_per_epoch must be at least 1".into());
        }
        if self.val_every == 0 || self.val_shots == 0 {
            return bad("val_every and val_shots must be at least 1".into());
        }
        if !(self.lr > 0.0) || !(self.lr_floor >= 0.0) || self.lr_floor > self.lr {
            return bad(format!("need 0 <= lr_floor <= lr, lr > 0 (got {}, {})", self.lr_floor, self.lr));
        }
        if self.train_p.is_empty() {
            return bad("train_p is empty".into());
        }
        for &p in self.train_p.iter().chain([&self.val_p]) {
            if !(0.0..=0.75).contains(&p) {
                return bad(format!("error rate {p} outside [0, 0.75]"));
            }
        }
        for (name, v) in [("mask_prob", self.mask_prob), ("mask_fraction", self.mask_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if !(self.weight_decay >= 0.0) || !(self.clip_norm > 0.0) {
            return bad("weight_decay must be >= 0 and clip_norm > 0".into());
        }
        if let Some(e) = self.ema_decay {
            if !(0.0..1.0).contains(&e) {
                return bad(format!("ema_decay {e} outside [0, 1)"));
            }
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if let Some(stages) = &self.curriculum {
            if stages.is_empty() || stages[0].step != 0 {
                return bad("curriculum must start at step 0".into());
            }
            if stages.windows(2).any(|w| w[1].step <= w[0].step) {
                return bad("curriculum steps must increase".into());
            }
            if stages.iter().any(|s| s.max_rounds == 0) {
                return bad("curriculum max_rounds must be at least 1".into());
            }
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.samples_per_epoch.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch()
    }

    /// Largest round count allowed at `step`.
    pub fn max_rounds_at(&self, step: usize) -> usize {
        match &self.curriculum {
            Some(stages) => stages
                .iter()
                .take_while(|s| s.step <= step)
                .last()
                .map_or(self.rounds, |s| s.max_rounds),
            None => self.rounds,
        }
    }
}

/// Per-tensor gradients, laid out like [`Parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &Parameters<T>) -> Self {
        Self {
            tensors: params
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: vec![T::zero(); t.data.len()],
                })
                .collect(),
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| {
                let v = v.to_f64().unwrap();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|t| t.data.iter().any(|v| !v.is_finite()))
            .map(|t| t.name.as_str())
    }
}

fn check_labels(labels: &[[u8; 2]], heads: usize) -> Result<()> {
    for (row, l) in labels.iter().enumerate() {
        if l[..heads].iter().any(|&v| v > 1) {
            return Err(Error::Domain(format!("row {row}: label {l:?} outside {{0, 1}}")));
        }
    }
    Ok(())
}

/// `softplus(z) − y·z`, the binary cross-entropy of `σ(z)` against `y`.
fn bce<T: Real>(z: T, y: u8) -> T {
    softplus(z) - if y == 1 { z } else { T::zero() }
}

/// Mean over rows of the per-head binary cross-entropies, summed over heads.
pub fn loss(predictions: &Predictions, labels: &[[u8; 2]]) -> Result<f64> {
    let heads = predictions.heads;
    if labels.len() != predictions.rows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} predictions",
            labels.len(),
            predictions.rows()
        )));
    }
    check_labels(labels, heads)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, l)| (0..heads).map(|h| bce(predictions.logit(r, h), l[h])).sum::<f64>())
        .sum();
    Ok(total / labels.len().max(1) as f64)
}

/// Rows per gradient chunk. Chunks are reduced in index order, so results do
/// not depend on the worker count.
const CHUNK_ROWS: usize = 8;

/// Loss and gradients of a batch. `dropout_seed` enables dropout with
/// per-row streams derived from it.
pub fn backward_with<T: Real>(
    params: &Parameters<T>,
    batch: &Batch,
    dropout_seed: Option<u64>,
) -> Result<(f64, Gradients<T>)> {
    batch.validate()?;
    let heads = params.config.heads;
    check_labels(&batch.labels, heads)?;
    let b = batch.batch_size;
    let scale = c::<T>(1.0 / b.max(1) as f64);
    let chunks: Vec<(f64, Vec<Vec<T>>)> = (0..b.div_ceil(CHUNK_ROWS))
        .into_par_iter()
        .map(|ci| {
            let mut grads: Vec<Vec<T>> = params
                .tensors
                .iter()
                .map(|t| vec![T::zero(); t.data.len()])
                .collect();
            let mut total = 0.0;
            for row in ci * CHUNK_ROWS..((ci + 1) * CHUNK_ROWS).min(b) {
                let f = row_input::<T>(batch, row);
                let mut rng = dropout_seed.map(|s| ChaCha8Rng::seed_from_u64(derive_seed(s, row as u64)));
                let tape = forward_sequence(params, &f, batch.lengths[row], rng.as_mut());
                let mut dz = Vec::with_capacity(heads);
                for h in 0..heads {
                    let z = tape.logits[h];
                    let y = batch.labels[row][h];
                    total += bce(z, y).to_f64().unwrap();
                    dz.push((sigmoid(z) - c::<T>(y as f64)) * scale);
                }
                backward_sequence(params, &tape, &dz, &mut grads);
            }
            (total, grads)
        })
        .collect();

    let mut out = Gradients::zeros_like(params);
    let mut total = 0.0;
    for (l, g) in chunks {
        total += l;
        for (t, gv) in out.tensors.iter_mut().zip(g) {
            t.data.iter_mut().zip(gv).for_each(|(a, b)| *a += b);
        }
    }
    let loss = total / b.max(1) as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            tensor: "loss".into(),
        });
    }
    if let Some(name) = out.first_non_finite() {
        return Err(Error::NonFinite {
            tensor: name.to_string(),
        });
    }
    Ok((loss, out))
}

/// Loss and exact gradients with dropout disabled.
pub fn backward<T: Real>(params: &Parameters<T>, batch: &Batch) -> Result<(f64, Gradients<T>)> {
    backward_with(params, batch, None)
}

/// Loss of a batch in the parameters' own precision (no dropout).
pub fn batch_loss<T: Real>(params: &Parameters<T>, batch: &Batch) -> Result<f64> {
    batch.validate()?;
    let heads = params.config.heads;
    check_labels(&batch.labels, heads)?;
    let mut total = 0.0;
    for row in 0..batch.batch_size {
        let f = row_input::<T>(batch, row);
        let tape = forward_sequence(params, &f, batch.lengths[row], None);
        for h in 0..heads {
            total += bce(tape.logits[h], batch.labels[row][h]).to_f64().unwrap();
        }
    }
    Ok(total / batch.batch_size.max(1) as f64)
}
