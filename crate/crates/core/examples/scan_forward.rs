//! Runs the individual model stages on one shot: embedding, the selective
//! scan of the first layer and the full forward pass.

use qec_sparse::defects::{batch_from_shots, NUM_FEATURES};
use qec_sparse::lattice::Lattice;
use qec_sparse::model::{embed, forward, gated_dense, init_params, mamba_scan, ModelConfig};
use qec_sparse::noise::{sample_many, NoiseConfig};

fn norm(v: &[f32]) -> f32 {
    v.iter().map(|x| x * x).sum::<f32>().sqrt()
}

fn main() -> qec_sparse::Result<()> {
    let cfg = ModelConfig::default();
    let params = init_params(&cfg, 0)?;
    println!("{} parameters", params.count());

    let lattice = Lattice::new(5)?;
    let shots = sample_many(&lattice, &NoiseConfig::phenomenological(0.02, 5), 5, 0, 4)?;
    let batch = batch_from_shots(&shots, &lattice, cfg.k_max)?;
    let k = batch.lengths[0];
    let h = embed(&batch.row_features(0)[..k * NUM_FEATURES], &params)?;
    let s = mamba_scan(&h, &params, 0, &vec![1.0; k])?;
    let g = gated_dense(&h, &params, 0)?;
    println!("k = {k}: |embed| {:.3}, |scan| {:.3}, |gated dense| {:.3}", norm(&h), norm(&s), norm(&g));

    let preds = forward(&params, &batch)?;
    for r in 0..batch.batch_size {
        println!(
            "row {r}: k {:>3}  P(λZ) {:.3}  P(λX) {:.3}  truth {:?}",
            batch.k[r],
            preds.probability(r, 0),
            preds.probability(r, 1),
            batch.labels[r]
        );
    }
    Ok(())
}
