//! Majority vote over matchings with perturbed edge weights, compared with
//! plain matching on the same shots.

use qec_sparse::harness::{estimate_ler_with, LibraDecoder, MwpmDecoder};
use qec_sparse::lattice::Lattice;
use qec_sparse::noise::NoiseConfig;

fn main() -> qec_sparse::Result<()> {
    let lattice = Lattice::new(5)?;
    let noise = NoiseConfig::phenomenological(0.03, 5);
    let shots = 20_000;
    let base = estimate_ler_with(&MwpmDecoder::new(&lattice, &noise), &lattice, &noise, shots, 4)?;
    println!("mwpm        {:.4e}", base.ler);
    for members in [1, 5, 15] {
        let dec = LibraDecoder::new(&lattice, &noise, members, 0.1, 99);
        let e = estimate_ler_with(&dec, &lattice, &noise, shots, 4)?;
        println!("{:<11} {:.4e}  [{:.4e}, {:.4e}]", e.decoder, e.ler, e.ci_lo, e.ci_hi);
    }
    Ok(())
}
