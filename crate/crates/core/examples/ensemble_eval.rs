//! Saves a few independently seeded models, reloads them as checkpoints
//! and evaluates their logit-averaged ensemble.

use qec_sparse::harness::{estimate_ler_with, NeuralDecoder};
use qec_sparse::lattice::Lattice;
use qec_sparse::model::{load_params, save_params, ModelConfig};
use qec_sparse::noise::{NoiseConfig, NoiseKind};
use qec_sparse::training::{train, TrainConfig};

fn main() -> qec_sparse::Result<()> {
    let dir = tempfile::tempdir()?;
    let lattice = Lattice::new(3)?;
    let model = ModelConfig {
        d_model: 32,
        layers: 1,
        k_max: 16,
        ..ModelConfig::default()
    };
    let mut paths = Vec::new();
    for seed in 1..=3 {
        let tc = TrainConfig {
            lr: 1e-3,
            lr_floor: 1e-5,
            samples_per_epoch: 20_000,
            batch_size: 64,
            train_p: vec![0.05, 0.1],
            weight_decay: 0.0,
            val_shots: 5_000,
            val_every: 100,
            seed,
            ..TrainConfig::default()
        };
        let out = train(&model, &tc, &lattice, NoiseKind::CodeCapacity)?;
        let path = dir.path().join(format!("seed{seed}.smdw"));
        save_params(&out.best, &path)?;
        paths.push(path);
    }
    let members = paths.iter().map(load_params).collect::<qec_sparse::Result<Vec<_>>>()?;
    let noise = NoiseConfig::code_capacity(0.05);
    for m in 1..=members.len() {
        let dec = NeuralDecoder::new(&lattice, members[..m].to_vec())?;
        let e = estimate_ler_with(&dec, &lattice, &noise, 50_000, 21)?;
        println!("{:<16} {:.4e}  [{:.4e}, {:.4e}]", e.decoder, e.ler, e.ci_lo, e.ci_hi);
    }
    Ok(())
}
