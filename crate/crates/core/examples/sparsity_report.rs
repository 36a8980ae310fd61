//! Defect counts against the dense syndrome size for long memory
//! experiments.

use qec_sparse::harness::sparsity_report;
use qec_sparse::lattice::Lattice;
use qec_sparse::noise::NoiseConfig;

fn main() -> qec_sparse::Result<()> {
    println!("d   p       checks  dense   mean k    p99 k  ratio");
    for p in [1e-3, 3e-3] {
        for d in [3, 5, 7] {
            let lattice = Lattice::new(d)?;
            let s = sparsity_report(&lattice, &NoiseConfig::phenomenological(p, 120), 1000, 1)?;
            println!(
                "{d}   {p:.0e}   {:>4}    {:>5}   {:>7.2}   {:>4}   {:.3}%",
                lattice.num_stabilizers(),
                s.dense_size,
                s.mean_k,
                s.p99_k,
                100.0 * s.ratio
            );
        }
    }
    Ok(())
}
