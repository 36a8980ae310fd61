//! Builds a rotated surface code and prints its checks, neighbors and
//! boundary distances.
//!
//!     cargo run --example lattice_tour -- 5

use qec_sparse::lattice::{CheckKind, Lattice};

fn main() -> qec_sparse::Result<()> {
    let d = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let lattice = Lattice::new(d)?;
    println!(
        "d = {d}: {} data qubits, {} checks ({} Z, {} X)",
        lattice.num_data_qubits(),
        lattice.num_stabilizers(),
        lattice.stabilizers_of_kind(CheckKind::Z).len(),
        lattice.stabilizers_of_kind(CheckKind::X).len(),
    );
    println!("logical Z support: {:?}", lattice.logical_z_support);
    println!("logical X support: {:?}", lattice.logical_x_support);
    print!("{}", lattice.dump());
    Ok(())
}
