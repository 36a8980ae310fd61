use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{backward, batch_loss};
use crate::defects::{Batch, NUM_FEATURES};
use crate::error::Result;
use crate::model::{init_params, ModelConfig, Parameters};

/// Denominator floor for the relative error. Central differences in f64 at
/// step 1e-5 carry roughly 1e-11 of rounding noise, so gradients below this
/// are effectively compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub parameters: usize,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares reverse-mode gradients against central differences for every
/// scalar parameter.
pub fn gradcheck_batch(params: &Parameters<f64>, batch: &Batch, step: f64) -> Result<GradcheckReport> {
    let (_, grads) = backward(params, batch)?;
    let mut probe = params.clone();
    let mut report = GradcheckReport {
        parameters: params.count(),
        checked: 0,
        max_rel_err: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for ti in 0..params.tensors.len() {
        for j in 0..params.tensors[ti].data.len() {
            let orig = params.tensors[ti].data[j];
            probe.tensors[ti].data[j] = orig + step;
            let up = batch_loss(&probe, batch)?;
            probe.tensors[ti].data[j] = orig - step;
            let down = batch_loss(&probe, batch)?;
            probe.tensors[ti].data[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = grads.tensors[ti].data[j];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_tensor = params.tensors[ti].name.clone();
                report.worst_index = j;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Random batch of `batch_size` rows with lengths in `1..=k` and uniform
/// features, for gradient checks and smoke tests.
pub fn random_batch(batch_size: usize, k: usize, k_max: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = Batch {
        batch_size,
        k_max,
        features: vec![0.0; batch_size * k_max * NUM_FEATURES],
        mask: vec![0.0; batch_size * k_max],
        labels: Vec::with_capacity(batch_size),
        lengths: Vec::with_capacity(batch_size),
        k: Vec::with_capacity(batch_size),
        truncated: vec![false; batch_size],
    };
    for r in 0..batch_size {
        let len = rng.gen_range(1..=k.min(k_max));
        for v in &mut batch.features[r * k_max * NUM_FEATURES..][..len * NUM_FEATURES] {
            *v = rng.gen();
        }
        batch.mask[r * k_max..][..len].fill(1.0);
        batch.labels.push([rng.gen_range(0..2), rng.gen_range(0..2)]);
        batch.lengths.push(len);
        batch.k.push(len);
    }
    batch
}

/// Gradient check of a freshly initialized model in 64-bit precision. All
/// parameters receive a small random offset so that zero-initialized biases
/// and unit gains are exercised away from their special values.
pub fn gradcheck(
    config: &ModelConfig,
    seed: u64,
    batch_size: usize,
    k: usize,
    step: f64,
) -> Result<GradcheckReport> {
    let mut params = init_params(config, seed)?.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in params.tensors.iter_mut() {
        for v in t.data.iter_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    let batch = random_batch(batch_size, k, config.k_max, seed.wrapping_add(1));
    gradcheck_batch(&params, &batch, step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ReadoutKind;

    #[test]
    fn tiny_models_agree_with_finite_differences() {
        for (heads, readout) in [(1, ReadoutKind::Mlp), (2, ReadoutKind::Resblock)] {
            let cfg = ModelConfig {
                d_model: 8,
                layers: 1,
                d_state: 4,
                d_conv: 3,
                d_read: 8,
                res_blocks: 1,
                heads,
                readout,
                k_max: 6,
                ..ModelConfig::default()
            };
            let r = gradcheck(&cfg, 11, 2, 6, 1e-5).unwrap();
            assert!(r.max_rel_err <= 1e-4, "{r:?}");
        }
    }
}
