//! Monte Carlo evaluation: logical error rates with Wilson intervals,
//! decoder construction from experiment specs, latency benchmarks, sparsity
//! and CSV/JSON reports.

mod decoders;
pub mod jobs;
mod latency;
mod report;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::model::{load_params_with_meta, Parameters};
use crate::noise::{derive_seed, sample_many, NoiseConfig, NoiseKind};
use crate::training::TrainConfig;

pub use decoders::{ensemble_predict, Decoder, LibraDecoder, MwpmDecoder, NeuralDecoder};
pub use latency::{
    fit_linear, measure_latency, synthetic_shots, LatencyReport, LatencyWorkload, LinearFit,
};
pub use report::{read_csv, write_csv, write_report, ReportRow, REPORT_COLUMNS};

/// Seed domain of evaluation shots.
pub const EVAL_DOMAIN: u64 = 0x6576_616c_0000_0003;

/// Shots decoded per chunk in [`estimate_ler_with`].
const EVAL_CHUNK: usize = 20_000;

/// 95% Wilson score interval for `failures` out of `shots`.
pub fn wilson_interval(failures: u64, shots: u64) -> (f64, f64) {
    if shots == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n = shots as f64;
    let phat = failures as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (phat + z2 / (2.0 * n)) / denom;
    let half = z * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if failures == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if failures >= shots { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadStats {
    pub failures: u64,
    pub ler: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl HeadStats {
    fn new(failures: u64, shots: u64) -> Self {
        let (ci_lo, ci_hi) = wilson_interval(failures, shots);
        Self {
            failures,
            ler: failures as f64 / shots.max(1) as f64,
            ci_lo,
            ci_hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LerEstimate {
    pub decoder: String,
    pub distance: usize,
    pub noise: NoiseConfig,
    pub shots: u64,
    /// Combined failures: any scored head wrong.
    pub failures: u64,
    pub ler: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `[λ_Z, λ_X]` breakdown when two heads are scored.
    pub per_head: Option<[HeadStats; 2]>,
    pub mean_k: f64,
    pub truncated_frac: f64,
    /// Decode wall time per shot, extraction included.
    pub time_us_per_shot: f64,
}

impl LerEstimate {
    /// Half-width of the confidence interval.
    pub fn ci_width(&self) -> f64 {
        self.ci_hi - self.ci_lo
    }
}

/// Samples `shots` evaluation shots rooted at `seed` and scores `decoder`.
pub fn estimate_ler_with(
    decoder: &dyn Decoder,
    lattice: &Lattice,
    noise: &NoiseConfig,
    shots: u64,
    seed: u64,
) -> Result<LerEstimate> {
    if shots == 0 {
        return Err(Error::Config("shot count must be at least 1".into()));
    }
    noise.validate()?;
    let heads = decoder.heads();
    let master = derive_seed(seed, EVAL_DOMAIN);
    let (mut fails, mut head_fails) = (0u64, [0u64; 2]);
    let (mut k_sum, mut truncated) = (0u64, 0u64);
    let mut decode_time = 0.0;
    let mut done = 0u64;
    while done < shots {
        let n = ((shots - done) as usize).min(EVAL_CHUNK);
        let batch = sample_many(lattice, noise, master, done, n)?;
        let t = Instant::now();
        let preds = decoder.decode(&batch)?;
        decode_time += t.elapsed().as_secs_f64();
        for (shot, pred) in batch.iter().zip(&preds) {
            let mut any = false;
            for h in 0..heads {
                if pred[h] != shot.observables[h] {
                    head_fails[h] += 1;
                    any = true;
                }
            }
            fails += any as u64;
            let k = shot.events.count_ones();
            k_sum += k as u64;
            if decoder.k_max().is_some_and(|m| k > m) {
                truncated += 1;
            }
        }
        done += n as u64;
    }
    let (ci_lo, ci_hi) = wilson_interval(fails, shots);
    Ok(LerEstimate {
        decoder: decoder.id(),
        distance: lattice.distance,
        noise: *noise,
        shots,
        failures: fails,
        ler: fails as f64 / shots as f64,
        ci_lo,
        ci_hi,
        per_head: (heads == 2).then(|| [HeadStats::new(head_fails[0], shots), HeadStats::new(head_fails[1], shots)]),
        mean_k: k_sum as f64 / shots as f64,
        truncated_frac: truncated as f64 / shots as f64,
        time_us_per_shot: decode_time * 1e6 / shots as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Mwpm,
    Libra,
    Smd,
    SmdEnsemble,
}

fn default_libra_members() -> usize {
    16
}

fn default_libra_scale() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: String,
    pub distances: Vec<usize>,
    pub noise: Vec<NoiseConfig>,
    pub decoder: DecoderKind,
    #[serde(default)]
    pub checkpoints: Vec<PathBuf>,
    #[serde(default = "default_libra_members")]
    pub libra_members: usize,
    #[serde(default = "default_libra_scale")]
    pub libra_scale: f64,
    pub shots: u64,
    pub seed: u64,
    /// CSV report path; a JSON sidecar is written next to it.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.shots == 0 {
            return bad("shots must be at least 1".into());
        }
        if self.distances.is_empty() || self.noise.is_empty() {
            return bad("need at least one distance and one noise config".into());
        }
        for &d in &self.distances {
            if d < 3 || d % 2 == 0 {
                return Err(Error::InvalidDistance(d));
            }
        }
        for n in &self.noise {
            n.validate()?;
        }
        match self.decoder {
            DecoderKind::Smd if self.checkpoints.len() != 1 => {
                bad("smd needs exactly one checkpoint".into())
            }
            DecoderKind::SmdEnsemble if self.checkpoints.is_empty() => {
                bad("smd_ensemble needs a nonempty checkpoint list".into())
            }
            DecoderKind::Libra if self.libra_members == 0 => {
                bad("libra_members must be at least 1".into())
            }
            _ => Ok(()),
        }
    }

    /// Loads every checkpoint, rejecting any trained on the evaluation seed.
    pub fn load_checkpoints(&self) -> Result<Vec<Parameters<f32>>> {
        self.checkpoints
            .iter()
            .map(|path| {
                let ckpt = |reason: String| Error::Checkpoint {
                    path: path.display().to_string(),
                    reason,
                };
                let (params, meta) = load_params_with_meta(path).map_err(|e| ckpt(e.to_string()))?;
                if let Some(meta) = meta {
                    if let Ok(tc) = serde_json::from_value::<TrainConfig>(meta) {
                        if tc.seed == self.seed {
                            return Err(ckpt(format!(
                                "trained with seed {}, which is also the evaluation seed",
                                tc.seed
                            )));
                        }
                    }
                }
                Ok(params)
            })
            .collect()
    }

    /// Builds the decoder for one evaluation point.
    pub fn decoder_for(
        &self,
        lattice: &Lattice,
        noise: &NoiseConfig,
        checkpoints: &[Parameters<f32>],
    ) -> Result<Box<dyn Decoder>> {
        Ok(match self.decoder {
            DecoderKind::Mwpm => Box::new(MwpmDecoder::new(lattice, noise)),
            DecoderKind::Libra => Box::new(LibraDecoder::new(
                lattice,
                noise,
                self.libra_members,
                self.libra_scale,
                derive_seed(self.seed, 0x11b4a),
            )),
            DecoderKind::Smd | DecoderKind::SmdEnsemble => {
                Box::new(NeuralDecoder::new(lattice, checkpoints.to_vec())?)
            }
        })
    }
}

/// Runs every `(distance, noise)` point of the spec, writing the report when
/// an output path is set.
pub fn estimate_ler(spec: &ExperimentSpec) -> Result<Vec<LerEstimate>> {
    spec.validate()?;
    let checkpoints = spec.load_checkpoints()?;
    let mut out = Vec::new();
    for &d in &spec.distances {
        let lattice = Lattice::new(d)?;
        for noise in &spec.noise {
            let dec = spec.decoder_for(&lattice, noise, &checkpoints)?;
            out.push(estimate_ler_with(dec.as_ref(), &lattice, noise, spec.shots, spec.seed)?);
        }
    }
    if let Some(path) = &spec.output {
        let rows: Vec<ReportRow> = out.iter().map(|e| ReportRow::from_estimate(&spec.id, e)).collect();
        write_report(&rows, path, spec, &out)?;
    }
    Ok(out)
}

/// Sparsity of `shots` fresh shots at one noise point (seeded in the
/// evaluation domain).
pub fn sparsity_report(
    lattice: &Lattice,
    noise: &NoiseConfig,
    shots: usize,
    seed: u64,
) -> Result<crate::defects::SparsityStats> {
    noise.validate()?;
    let sample = sample_many(lattice, noise, derive_seed(seed, EVAL_DOMAIN), 0, shots)?;
    let rounds = match noise.kind {
        NoiseKind::CodeCapacity => 1,
        NoiseKind::Phenomenological => noise.rounds,
    };
    crate::defects::sparsity_stats(&sample, lattice, rounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::Shot;

    struct Oracle;
    impl Decoder for Oracle {
        fn id(&self) -> String {
            "oracle".into()
        }
        fn decode(&self, shots: &[Shot]) -> Result<Vec<[u8; 2]>> {
            Ok(shots.iter().map(|s| s.observables).collect())
        }
    }

    struct Coin(usize);
    impl Decoder for Coin {
        fn id(&self) -> String {
            "coin".into()
        }
        fn heads(&self) -> usize {
            self.0
        }
        fn decode(&self, shots: &[Shot]) -> Result<Vec<[u8; 2]>> {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(shots[0].seed ^ 0xc0ff_ee00);
            Ok(shots.iter().map(|_| [rng.gen_range(0..2), rng.gen_range(0..2)]).collect())
        }
    }

    #[test]
    fn wilson_known_values() {
        let (lo, hi) = wilson_interval(0, 100);
        assert_eq!(lo, 0.0);
        // Zero failures: the upper bound is z² / (n + z²).
        let z2 = 1.959_963_984_540_054f64.powi(2);
        assert!((hi - z2 / (100.0 + z2)).abs() < 1e-15, "{hi}");
        let (lo, hi) = wilson_interval(50, 100);
        assert!((lo - 0.403_831_4).abs() < 1e-6 && (hi - 0.596_168_6).abs() < 1e-6);
    }

    #[test]
    fn oracle_has_zero_ler() {
        let lat = Lattice::new(3).unwrap();
        let e = estimate_ler_with(&Oracle, &lat, &NoiseConfig::code_capacity(0.1), 2000, 1).unwrap();
        assert_eq!(e.failures, 0);
        assert_eq!(e.ci_hi, wilson_interval(0, 2000).1);
    }

    #[test]
    fn coin_flip_matches_random_guessing() {
        let lat = Lattice::new(3).unwrap();
        let noise = NoiseConfig::code_capacity(0.05);
        for (heads, want) in [(2, 0.75), (1, 0.5)] {
            let e = estimate_ler_with(&Coin(heads), &lat, &noise, 100_000, 4).unwrap();
            assert!(e.ci_lo <= want && want <= e.ci_hi, "{heads}: {e:?}");
        }
    }

    #[test]
    fn ler_monotone_and_distance_suppression() {
        let l3 = Lattice::new(3).unwrap();
        let l5 = Lattice::new(5).unwrap();
        let lo = NoiseConfig::code_capacity(0.03);
        let hi = NoiseConfig::code_capacity(0.10);
        let a = estimate_ler_with(&MwpmDecoder::new(&l3, &lo), &l3, &lo, 100_000, 2).unwrap();
        let b = estimate_ler_with(&MwpmDecoder::new(&l3, &hi), &l3, &hi, 100_000, 2).unwrap();
        assert!(a.ci_hi < b.ci_lo);
        let c = estimate_ler_with(&MwpmDecoder::new(&l5, &lo), &l5, &lo, 100_000, 2).unwrap();
        assert!(c.ci_hi < a.ci_lo);
    }

    #[test]
    fn spec_validation() {
        let spec = ExperimentSpec {
            id: "x".into(),
            distances: vec![3],
            noise: vec![NoiseConfig::code_capacity(0.05)],
            decoder: DecoderKind::SmdEnsemble,
            checkpoints: vec![],
            libra_members: 4,
            libra_scale: 0.1,
            shots: 10,
            seed: 1,
            output: None,
        };
        assert!(spec.validate().is_err());
        assert!(ExperimentSpec { shots: 0, decoder: DecoderKind::Mwpm, ..spec.clone() }.validate().is_err());
        ExperimentSpec { decoder: DecoderKind::Mwpm, ..spec }.validate().unwrap();
    }
}
