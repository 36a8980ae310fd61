use crate::defects::batch_from_shots;
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::matching::{decode_shot_libra, decode_shot_mwpm, MatchingGraphs};
use crate::model::{forward, Parameters, Predictions};
use crate::noise::{derive_seed, NoiseConfig, Shot};
use rayon::prelude::*;

/// Anything that turns shots into predicted `[λ_Z, λ_X]`.
pub trait Decoder: Sync {
    fn id(&self) -> String;

    /// Heads scored for failures: 2 compares both observables, 1 only λ_Z.
    fn heads(&self) -> usize {
        2
    }

    /// Token budget of sequence decoders; shots with more defects are
    /// decoded truncated.
    fn k_max(&self) -> Option<usize> {
        None
    }

    fn decode(&self, shots: &[Shot]) -> Result<Vec<[u8; 2]>>;
}

pub struct MwpmDecoder {
    graphs: MatchingGraphs,
}

impl MwpmDecoder {
    pub fn new(lattice: &Lattice, noise: &NoiseConfig) -> Self {
        Self {
            graphs: MatchingGraphs::new(lattice, noise),
        }
    }
}

impl Decoder for MwpmDecoder {
    fn id(&self) -> String {
        "mwpm".into()
    }

    fn decode(&self, shots: &[Shot]) -> Result<Vec<[u8; 2]>> {
        Ok(shots.par_iter().map(|s| decode_shot_mwpm(s, &self.graphs)).collect())
    }
}

/// Majority vote over matchings with log-normally perturbed weights.
pub struct LibraDecoder {
    graphs: MatchingGraphs,
    pub members: usize,
    pub scale: f64,
    pub seed: u64,
}

impl LibraDecoder {
    pub fn new(lattice: &Lattice, noise: &NoiseConfig, members: usize, scale: f64, seed: u64) -> Self {
        Self {
            graphs: MatchingGraphs::new(lattice, noise),
            members,
            scale,
            seed,
        }
    }
}

impl Decoder for LibraDecoder {
    fn id(&self) -> String {
        format!("libra-{}", self.members)
    }

    fn decode(&self, shots: &[Shot]) -> Result<Vec<[u8; 2]>> {
        Ok(shots
            .par_iter()
            .map(|s| {
                decode_shot_libra(s, &self.graphs, self.members, self.scale, derive_seed(self.seed, s.seed))
            })
            .collect())
    }
}

/// Mean of per-model logits; a single model reduces to [`forward`].
pub fn ensemble_predict(
    checkpoints: &[Parameters<f32>],
    batch: &crate::defects::Batch,
) -> Result<Predictions> {
    let first = checkpoints
        .first()
        .ok_or_else(|| Error::Config("ensemble needs at least one checkpoint".into()))?;
    let heads = first.config.heads;
    for (i, p) in checkpoints.iter().enumerate() {
        if p.config.heads != heads {
            return Err(Error::Config(format!(
                "checkpoint {i} has {} heads, checkpoint 0 has {heads}",
                p.config.heads
            )));
        }
        if p.config.k_max < batch.k_max {
            return Err(Error::Config(format!(
                "checkpoint {i} accepts k_max {}, batch has {}",
                p.config.k_max, batch.k_max
            )));
        }
    }
    if checkpoints.len() == 1 {
        return forward(first, batch);
    }
    let mut sum = vec![0.0f64; batch.batch_size * heads];
    for p in checkpoints {
        let pr = forward(p, batch)?;
        sum.iter_mut().zip(&pr.logits).for_each(|(a, b)| *a += b);
    }
    let m = checkpoints.len() as f64;
    Ok(Predictions {
        heads,
        logits: sum.into_iter().map(|v| v / m).collect(),
    })
}

/// The neural decoder: extraction, padding to the smallest member `k_max`,
/// then (ensemble-averaged) forward.
pub struct NeuralDecoder {
    lattice: Lattice,
    members: Vec<Parameters<f32>>,
    label: String,
}

impl NeuralDecoder {
    pub fn new(lattice: &Lattice, members: Vec<Parameters<f32>>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Config("no checkpoints given".into()));
        }
        let label = if members.len() == 1 {
            "smd".to_string()
        } else {
            format!("smd_ensemble-{}", members.len())
        };
        Ok(Self {
            lattice: lattice.clone(),
            members,
            label,
        })
    }
}

impl Decoder for NeuralDecoder {
    fn id(&self) -> String {
        self.label.clone()
    }

    fn heads(&self) -> usize {
        self.members[0].config.heads
    }

    fn k_max(&self) -> Option<usize> {
        self.members.iter().map(|p| p.config.k_max).min()
    }

    fn decode(&self, shots: &[Shot]) -> Result<Vec<[u8; 2]>> {
        let batch = batch_from_shots(shots, &self.lattice, self.k_max().unwrap())?;
        let preds = ensemble_predict(&self.members, &batch)?;
        Ok((0..batch.batch_size).map(|r| preds.observables(r)).collect())
    }
}
