//! Turns a shot into defect tokens and a padded batch.

use qec_sparse::defects::{batch_from_shots, extract_defects, NUM_FEATURES};
use qec_sparse::lattice::Lattice;
use qec_sparse::noise::{sample_many, NoiseConfig};

fn main() -> qec_sparse::Result<()> {
    let lattice = Lattice::new(5)?;
    let noise = NoiseConfig::phenomenological(0.02, 5);
    let shots = sample_many(&lattice, &noise, 3, 0, 8)?;
    let seq = extract_defects(&shots[0], &lattice)?;
    println!("{} defects, observables {:?}", seq.k, seq.observables);
    println!("stab round   x     y     t   type  nbrs(NE NW SE SW) prev next  bZ    bX   meas");
    for tok in &seq.tokens {
        let f = tok.features;
        println!(
            "{:>4} {:>5}  {:.2}  {:.2}  {:.2}  {:.0}     {:.0} {:.0} {:.0} {:.0}           {:.0}    {:.0}    {:.2}  {:.2}  {:.0}",
            tok.stabilizer, tok.round, f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8], f[9], f[10], f[11], f[12]
        );
    }
    let batch = batch_from_shots(&shots, &lattice, 16)?;
    println!(
        "batch: {} rows × k_max {} × {NUM_FEATURES}; lengths {:?}; truncated {:?}",
        batch.batch_size, batch.k_max, batch.lengths, batch.truncated
    );
    Ok(())
}
