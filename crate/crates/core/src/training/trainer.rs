use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adamw_step, backward_with, lion_step, mask_features, OptState, OptimizerKind, TrainConfig};
use crate::defects::{batch_from_shots, Batch};
use crate::error::Result;
use crate::lattice::Lattice;
use crate::model::{forward, init_params, ModelConfig, Parameters};
use crate::noise::{derive_seed, sample_many, NoiseConfig, NoiseKind, Shot};

/// Seed domains: training and validation streams never share a shot seed.
pub const TRAIN_DOMAIN: u64 = 0x7472_6169_6e00_0001;
pub const VAL_DOMAIN: u64 = 0x7661_6c69_6400_0002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub val_ler: Option<f64>,
    /// Seconds since training started (the only non-reproducible column).
    pub wallclock: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Raw weights after the last step.
    pub params: Parameters<f32>,
    /// EMA shadow weights when enabled.
    pub ema: Option<Parameters<f32>>,
    /// Weights (EMA if enabled) with the lowest validation LER.
    pub best: Parameters<f32>,
    pub best_val_ler: Option<f64>,
    pub history: Vec<HistoryRow>,
}

fn noise_for(kind: NoiseKind, p: f64, rounds: usize) -> NoiseConfig {
    match kind {
        NoiseKind::CodeCapacity => NoiseConfig::code_capacity(p),
        NoiseKind::Phenomenological => NoiseConfig::phenomenological(p, rounds),
    }
}

/// Held-out validation shots at `val_p` with the final curriculum depth.
pub fn validation_set(lattice: &Lattice, kind: NoiseKind, tc: &TrainConfig) -> Result<Vec<Shot>> {
    let rounds = tc.max_rounds_at(tc.total_steps());
    let noise = noise_for(kind, tc.val_p, rounds);
    noise.validate()?;
    sample_many(lattice, &noise, derive_seed(tc.seed, VAL_DOMAIN), 0, tc.val_shots)
}

/// Combined failure fraction of a model on a prepared batch: a shot fails if
/// any predicted head disagrees with its label.
pub(crate) fn batch_ler(params: &Parameters<f32>, batch: &Batch) -> Result<f64> {
    let preds = forward(params, batch)?;
    let heads = params.config.heads;
    let fails = (0..batch.batch_size)
        .filter(|&r| (0..heads).any(|h| preds.predicted(r, h) != batch.labels[r][h]))
        .count();
    Ok(fails as f64 / batch.batch_size.max(1) as f64)
}

fn ema_update(ema: &mut Parameters<f32>, params: &Parameters<f32>, decay: f64) {
    let d = decay as f32;
    for (e, p) in ema.tensors.iter_mut().zip(&params.tensors) {
        for (a, &b) in e.data.iter_mut().zip(&p.data) {
            *a = d * *a + (1.0 - d) * b;
        }
    }
}

/// Trains from a fresh initialization (seeded by `train_config.seed`).
pub fn train(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    lattice: &Lattice,
    kind: NoiseKind,
) -> Result<TrainOutcome> {
    train_with_progress(model_config, train_config, lattice, kind, |_| {})
}

/// [`train`] with a callback invoked after every history row.
pub fn train_with_progress(
    model_config: &ModelConfig,
    tc: &TrainConfig,
    lattice: &Lattice,
    kind: NoiseKind,
    mut progress: impl FnMut(&HistoryRow),
) -> Result<TrainOutcome> {
    model_config.validate()?;
    tc.validate()?;
    let mut params = init_params(model_config, tc.seed)?;
    let mut ema = tc.ema_decay.map(|_| params.clone());
    let mut best = params.clone();
    let mut best_val_ler: Option<f64> = None;
    let mut history = Vec::new();
    let total = tc.total_steps();
    if total == 0 {
        return Ok(TrainOutcome {
            params,
            ema,
            best,
            best_val_ler,
            history,
        });
    }

    let val_batch = batch_from_shots(
        &validation_set(lattice, kind, tc)?,
        lattice,
        model_config.k_max,
    )?;
    let mut state = OptState::new(tc.optimizer, &params);
    let train_master = derive_seed(tc.seed, TRAIN_DOMAIN);
    let start = Instant::now();
    let spe = tc.steps_per_epoch();

    for step in 0..total {
        let epoch = step / spe;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(train_master, step as u64));
        let p = tc.train_p[rng.gen_range(0..tc.train_p.len())];
        let rounds = rng.gen_range(1..=tc.max_rounds_at(step));
        let noise = noise_for(kind, p, rounds);
        noise.validate()?;
        // Last batch of an epoch may be short so each epoch sees exactly
        // `samples_per_epoch` shots.
        let in_epoch = step % spe;
        let b = tc.batch_size.min(tc.samples_per_epoch - in_epoch * tc.batch_size);
        let shot_master = derive_seed(train_master ^ 0x5407, step as u64);
        let shots = sample_many(lattice, &noise, shot_master, 0, b)?;
        let mut batch = batch_from_shots(&shots, lattice, model_config.k_max)?;
        if tc.mask_prob > 0.0 {
            batch = mask_features(&batch, tc.mask_prob, tc.mask_fraction, rng.gen());
        }
        let dropout_seed = (model_config.dropout > 0.0).then(|| rng.gen::<u64>());
        let (loss, grads) = backward_with(&params, &batch, dropout_seed)?;
        let lr = match tc.optimizer {
            OptimizerKind::Adamw => adamw_step(&mut params, &grads, &mut state, tc),
            OptimizerKind::Lion => lion_step(&mut params, &grads, &mut state, tc),
        };
        if let (Some(e), Some(decay)) = (ema.as_mut(), tc.ema_decay) {
            ema_update(e, &params, decay);
        }

        let val_ler = if (step + 1) % tc.val_every == 0 || step + 1 == total {
            let current = ema.as_ref().unwrap_or(&params);
            let ler = batch_ler(current, &val_batch)?;
            if best_val_ler.is_none_or(|b| ler < b) {
                best_val_ler = Some(ler);
                best = current.clone();
            }
            Some(ler)
        } else {
            None
        };
        let row = HistoryRow {
            step,
            epoch,
            lr,
            loss,
            val_ler,
            wallclock: start.elapsed().as_secs_f64(),
        };
        progress(&row);
        history.push(row);
    }
    Ok(TrainOutcome {
        params,
        ema,
        best,
        best_val_ler,
        history,
    })
}

pub fn write_history_csv<W: Write>(mut w: W, history: &[HistoryRow]) -> Result<()> {
    writeln!(w, "step,epoch,lr,loss,val_ler,wallclock")?;
    for r in history {
        let val = r.val_ler.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{:.3}",
            r.step, r.epoch, r.lr, r.loss, val, r.wallclock
        )?;
    }
    Ok(())
}
