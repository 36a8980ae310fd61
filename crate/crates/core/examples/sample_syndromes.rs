//! Samples phenomenological-noise shots and prints the detection events of
//! the first few as spacetime grids.

use qec_sparse::lattice::Lattice;
use qec_sparse::noise::{sample_many, NoiseConfig};

fn main() -> qec_sparse::Result<()> {
    let lattice = Lattice::new(3)?;
    let noise = NoiseConfig::phenomenological(0.05, 4);
    let shots = sample_many(&lattice, &noise, 17, 0, 3)?;
    for shot in &shots {
        println!(
            "shot seed {:#018x}  observables [λZ, λX] = {:?}  events = {}",
            shot.seed,
            shot.observables,
            shot.events.count_ones()
        );
        for t in 0..shot.events.records {
            let row: String = shot
                .events
                .record(t)
                .iter()
                .map(|&b| if b == 1 { '#' } else { '.' })
                .collect();
            let meas: String = shot
                .measurements
                .record(t)
                .iter()
                .map(|&b| char::from(b'0' + b))
                .collect();
            println!("  t={t}  events {row}  measured {meas}");
        }
    }
    Ok(())
}
