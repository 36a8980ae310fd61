use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::defects::{Batch, NUM_FEATURES};

/// With probability `apply_prob`, zeroes a uniformly chosen `fraction` of the
/// (token, feature) entries of real tokens. Padding, masks and labels are
/// never touched.
pub fn mask_features(batch: &Batch, apply_prob: f64, fraction: f64, seed: u64) -> Batch {
    let mut out = batch.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if !(rng.gen::<f64>() < apply_prob) || fraction <= 0.0 {
        return out;
    }
    let mut starts = Vec::with_capacity(batch.batch_size + 1);
    starts.push(0usize);
    for &len in &batch.lengths {
        starts.push(starts.last().unwrap() + len * NUM_FEATURES);
    }
    let total = *starts.last().unwrap();
    let count = ((fraction.min(1.0) * total as f64).round() as usize).min(total);
    let stride = batch.k_max * NUM_FEATURES;
    for e in index::sample(&mut rng, total, count) {
        let row = starts.partition_point(|&s| s <= e) - 1;
        out.features[row * stride + (e - starts[row])] = 0.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::random_batch;

    fn filled() -> Batch {
        let mut b = random_batch(6, 5, 8, 3);
        // Distinctive padding so any write there is visible.
        for r in 0..b.batch_size {
            for j in b.lengths[r] * NUM_FEATURES..b.k_max * NUM_FEATURES {
                b.features[r * b.k_max * NUM_FEATURES + j] = 7.0;
            }
            for v in b.row_features_mut(r) {
                *v += 1.0;
            }
        }
        b
    }

    #[test]
    fn no_op_cases() {
        let b = filled();
        assert_eq!(mask_features(&b, 0.0, 0.5, 1), b);
        assert_eq!(mask_features(&b, 1.0, 0.0, 1), b);
    }

    #[test]
    fn full_fraction_zeroes_real_tokens_only() {
        let b = filled();
        let m = mask_features(&b, 1.0, 1.0, 2);
        assert_eq!(m.mask, b.mask);
        assert_eq!(m.labels, b.labels);
        for r in 0..b.batch_size {
            assert!(m.row_features(r).iter().all(|&v| v == 0.0));
            let s = r * b.k_max * NUM_FEATURES;
            for j in b.lengths[r] * NUM_FEATURES..b.k_max * NUM_FEATURES {
                assert_eq!(m.features[s + j], 7.0);
            }
        }
    }

    #[test]
    fn half_fraction_zeroes_exact_count() {
        let b = filled();
        let total: usize = b.lengths.iter().sum::<usize>() * NUM_FEATURES;
        for seed in 0..20 {
            let m = mask_features(&b, 1.0, 0.5, seed);
            let zeroed = m.features.iter().filter(|&&v| v == 0.0).count();
            assert_eq!(zeroed, (total as f64 * 0.5).round() as usize);
            assert_eq!(m.mask, b.mask);
            assert_eq!(m.labels, b.labels);
        }
    }
}
