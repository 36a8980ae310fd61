//! Matching-decoder logical error rates under code-capacity noise.
//!
//!     cargo run --release --example mwpm_baseline -- 100000

use qec_sparse::harness::{estimate_ler_with, MwpmDecoder};
use qec_sparse::lattice::Lattice;
use qec_sparse::noise::NoiseConfig;

fn main() -> qec_sparse::Result<()> {
    let shots = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100_000);
    println!("d  p      LER         95% CI                    λZ only");
    for d in [3, 5, 7] {
        let lattice = Lattice::new(d)?;
        for p in [0.01, 0.03, 0.05, 0.10] {
            let noise = NoiseConfig::code_capacity(p);
            let e = estimate_ler_with(&MwpmDecoder::new(&lattice, &noise), &lattice, &noise, shots, 1)?;
            println!(
                "{d}  {p:.2}   {:.3e}   [{:.3e}, {:.3e}]   {:.3e}",
                e.ler,
                e.ci_lo,
                e.ci_hi,
                e.per_head.map_or(f64::NAN, |h| h[0].ler)
            );
        }
    }
    Ok(())
}
