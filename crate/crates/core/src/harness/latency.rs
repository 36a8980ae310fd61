use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Decoder;
use crate::defects::cumulative_xor;
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::noise::{derive_seed, BitTable, NoiseKind, Shot};

/// Synthetic workload with exactly `k` detection events per shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyWorkload {
    pub distance: usize,
    pub k: usize,
    /// Noisy rounds; `None` picks the smallest that fits `k` events.
    #[serde(default)]
    pub rounds: Option<usize>,
    pub shots: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub decoder: String,
    pub batch_size: usize,
    /// Worker threads used while timing.
    pub workers: usize,
    pub mean_us: f64,
    /// Fastest repeat; the least disturbed by other load on the host.
    pub min_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub mean_k: f64,
    pub distance: usize,
    pub rounds: usize,
    pub repeats: usize,
}

/// Shots whose event tables hold exactly `k` ones at uniformly random
/// spacetime positions (observables zero; only decode cost matters).
pub fn synthetic_shots(lattice: &Lattice, k: usize, rounds: usize, count: usize, seed: u64) -> Result<Vec<Shot>> {
    let checks = lattice.num_stabilizers();
    let records = rounds + 1;
    if k > checks * records {
        return Err(Error::Config(format!(
            "k = {k} does not fit {checks} checks × {records} records"
        )));
    }
    (0..count)
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut events = vec![0u8; checks * records];
            for pos in index::sample(&mut rng, checks * records, k) {
                events[pos] = 1;
            }
            let events = BitTable::from_bits(checks, records, events)?;
            let mut meas = BitTable::zeros(checks, records);
            for c in 0..checks {
                for (r, v) in cumulative_xor(&events.series(c))?.into_iter().enumerate() {
                    meas.set(r, c, v);
                }
            }
            Ok(Shot {
                distance: lattice.distance,
                kind: NoiseKind::Phenomenological,
                rounds,
                seed: s,
                measurements: meas,
                events,
                observables: [0, 0],
            })
        })
        .collect()
}

impl LatencyWorkload {
    pub fn resolved_rounds(&self, lattice: &Lattice) -> usize {
        self.rounds
            .unwrap_or_else(|| self.k.div_ceil(lattice.num_stabilizers()).max(2) - 1)
    }
}

/// Times `decoder` on the workload for each batch size, single-threaded.
/// Each batch size gets one warm-up call and then `repeats` timed calls.
pub fn measure_latency(
    decoder: &dyn Decoder,
    workload: &LatencyWorkload,
    batch_sizes: &[usize],
    repeats: usize,
) -> Result<Vec<LatencyReport>> {
    let lattice = Lattice::new(workload.distance)?;
    let rounds = workload.resolved_rounds(&lattice);
    let shots = synthetic_shots(&lattice, workload.k, rounds, workload.shots.max(1), workload.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    for &b in batch_sizes {
        if b == 0 || repeats == 0 {
            return Err(Error::Config("batch size and repeats must be at least 1".into()));
        }
        let batch: Vec<Shot> = (0..b).map(|i| shots[i % shots.len()].clone()).collect();
        let times = pool.install(|| -> Result<Vec<f64>> {
            decoder.decode(&batch)?;
            let mut times = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let t = Instant::now();
                std::hint::black_box(decoder.decode(&batch)?);
                times.push(t.elapsed().as_secs_f64() * 1e6 / b as f64);
            }
            Ok(times)
        })?;
        let mut sorted = times.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let q = |f: f64| {
            let rank = ((f * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
            sorted[rank - 1]
        };
        out.push(LatencyReport {
            decoder: decoder.id(),
            batch_size: b,
            workers: 1,
            mean_us: times.iter().sum::<f64>() / times.len() as f64,
            min_us: sorted[0],
            p50_us: q(0.5),
            p99_us: q(0.99),
            mean_k: workload.k as f64,
            distance: workload.distance,
            rounds,
            repeats,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept` with its R².
pub fn fit_linear(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    LinearFit { slope, intercept, r2 }
}
