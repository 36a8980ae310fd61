//! Trains a small dual-head model on distance-3 code-capacity noise and
//! compares it with matching on shared evaluation shots.
//!
//!     cargo run --release --example train_toy -- 200000

use qec_sparse::harness::{estimate_ler_with, MwpmDecoder, NeuralDecoder};
use qec_sparse::lattice::Lattice;
use qec_sparse::model::ModelConfig;
use qec_sparse::noise::{NoiseConfig, NoiseKind};
use qec_sparse::training::{train_with_progress, TrainConfig};

fn main() -> qec_sparse::Result<()> {
    let samples = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50_000);
    let lattice = Lattice::new(3)?;
    let model = ModelConfig {
        d_model: 64,
        layers: 2,
        heads: 2,
        k_max: 16,
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        lr: 1e-3,
        lr_floor: 1e-5,
        samples_per_epoch: samples,
        batch_size: 64,
        train_p: vec![0.05, 0.08, 0.1],
        weight_decay: 0.0,
        val_shots: 20_000,
        val_every: 100,
        ..TrainConfig::default()
    };
    let out = train_with_progress(&model, &tc, &lattice, NoiseKind::CodeCapacity, |r| {
        if let Some(v) = r.val_ler {
            println!("step {:>5}  lr {:.2e}  loss {:.4}  val LER {:.4}  {:.0}s", r.step, r.lr, r.loss, v, r.wallclock);
        }
    })?;

    let noise = NoiseConfig::code_capacity(0.05);
    let nn = estimate_ler_with(&NeuralDecoder::new(&lattice, vec![out.best])?, &lattice, &noise, 100_000, 11)?;
    let mw = estimate_ler_with(&MwpmDecoder::new(&lattice, &noise), &lattice, &noise, 100_000, 11)?;
    println!("p = 0.05, 1e5 shared shots: smd {:.4e}, mwpm {:.4e}, ratio {:.3}", nn.ler, mw.ler, nn.ler / mw.ler);
    Ok(())
}
