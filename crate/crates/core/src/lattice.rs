//! Rotated surface-code geometry.
//!
//! Coordinates use the doubled convention: data qubit `(col, row)` sits at
//! `(2*col + 2, 2*row + 2)` and the plaquette with cell index `(a, b)` sits at
//! `(2*a + 1, 2*b + 1)`, `a, b ∈ 0..=d`. Rows grow southward. Plaquette type
//! follows the checkerboard: `a + b` even is Z-type, odd is X-type. Weight-2
//! X plaquettes live on the north/south edges, weight-2 Z plaquettes on the
//! west/east edges.
//!
//! Consequences used throughout the crate:
//! - X errors (seen by Z checks) form chains that terminate on the north/south
//!   edges. We call that pair of edges the *Z boundary*.
//! - Z errors (seen by X checks) terminate on the west/east edges, the
//!   *X boundary*.
//! - `logical_z_support` is the north row of data qubits, `logical_x_support`
//!   the west column; they share the corner qubit `(0, 0)`.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stabilizer (check) type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CheckKind {
    X,
    Z,
}

impl CheckKind {
    /// Feature encoding: X → 0, Z → 1.
    pub fn as_bit(self) -> u8 {
        match self {
            CheckKind::X => 0,
            CheckKind::Z => 1,
        }
    }

    pub fn other(self) -> CheckKind {
        match self {
            CheckKind::X => CheckKind::Z,
            CheckKind::Z => CheckKind::X,
        }
    }
}

/// Neighbor directions in the fixed feature order.
pub const NEIGHBOR_OFFSETS: [(i32, i32); 4] = [(2, -2), (-2, -2), (2, 2), (-2, 2)];

/// Index of the opposite direction for each entry of [`NEIGHBOR_OFFSETS`]
/// (NE↔SW, NW↔SE).
pub const OPPOSITE_DIRECTION: [usize; 4] = [3, 2, 1, 0];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stabilizer {
    pub id: usize,
    pub kind: CheckKind,
    /// Doubled-lattice coordinate `(x, y)`.
    pub coord: (i32, i32),
    /// Data-qubit ids, 2 on the boundary and 4 in the bulk.
    pub support: Vec<usize>,
    /// Same-type diagonal neighbors in NE, NW, SE, SW order.
    pub neighbors: [Option<usize>; 4],
    /// Hops to the north/south edges.
    pub hops_z_boundary: usize,
    /// Hops to the west/east edges.
    pub hops_x_boundary: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    pub distance: usize,
    /// Doubled coordinates, indexed by `row * d + col`.
    pub data_qubits: Vec<(i32, i32)>,
    /// Sorted row-major by coordinate.
    pub stabilizers: Vec<Stabilizer>,
    pub logical_z_support: Vec<usize>,
    pub logical_x_support: Vec<usize>,
    /// For each data qubit, the stabilizers whose support contains it.
    pub qubit_checks: Vec<Vec<usize>>,
}

impl Lattice {
    pub fn new(distance: usize) -> Result<Self> {
        build_lattice(distance)
    }

    pub fn num_stabilizers(&self) -> usize {
        self.stabilizers.len()
    }

    pub fn num_data_qubits(&self) -> usize {
        self.data_qubits.len()
    }

    /// Largest coordinate value on the doubled grid, `2d + 1`.
    pub fn max_coord(&self) -> i32 {
        2 * self.distance as i32 + 1
    }

    pub fn stabilizer(&self, id: usize) -> Result<&Stabilizer> {
        self.stabilizers.get(id).ok_or(Error::InvalidId {
            id,
            count: self.stabilizers.len(),
        })
    }

    pub fn stabilizers_of_kind(&self, kind: CheckKind) -> Vec<usize> {
        self.stabilizers
            .iter()
            .filter(|s| s.kind == kind)
            .map(|s| s.id)
            .collect()
    }

    /// Checks of the given kind that contain data qubit `q`.
    pub fn checks_touching(&self, q: usize, kind: CheckKind) -> impl Iterator<Item = usize> + '_ {
        self.qubit_checks[q]
            .iter()
            .copied()
            .filter(move |&s| self.stabilizers[s].kind == kind)
    }

    /// Human-readable picture plus a per-stabilizer table.
    pub fn dump(&self) -> String {
        let d = self.distance;
        let size = 2 * d as i32 + 2;
        let mut by_coord = HashMap::new();
        for s in &self.stabilizers {
            by_coord.insert(s.coord, s.kind);
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "rotated surface code d={d}: {} data qubits, {} stabilizers",
            self.num_data_qubits(),
            self.num_stabilizers()
        );
        for y in 1..size {
            for x in 1..size {
                let ch = if x % 2 == 0 && y % 2 == 0 {
                    'o'
                } else {
                    match by_coord.get(&(x, y)) {
                        Some(CheckKind::X) => 'X',
                        Some(CheckKind::Z) => 'Z',
                        None => ' ',
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        let _ = writeln!(out, "id  type  coord     support          NE  NW  SE  SW  bZ bX");
        for s in &self.stabilizers {
            let nb: Vec<String> = s
                .neighbors
                .iter()
                .map(|n| n.map_or("-".to_string(), |v| v.to_string()))
                .collect();
            let _ = writeln!(
                out,
                "{:<3} {:<5} {:<9} {:<16} {:<3} {:<3} {:<3} {:<3} {:<2} {}",
                s.id,
                format!("{:?}", s.kind),
                format!("({},{})", s.coord.0, s.coord.1),
                format!("{:?}", s.support),
                nb[0],
                nb[1],
                nb[2],
                nb[3],
                s.hops_z_boundary,
                s.hops_x_boundary
            );
        }
        let _ = writeln!(out, "logical Z support: {:?}", self.logical_z_support);
        let _ = writeln!(out, "logical X support: {:?}", self.logical_x_support);
        out
    }
}

fn plaquette_kind(a: usize, b: usize) -> CheckKind {
    if (a + b) % 2 == 0 {
        CheckKind::Z
    } else {
        CheckKind::X
    }
}

fn plaquette_exists(d: usize, a: usize, b: usize) -> bool {
    let inner = |v: usize| (1..d).contains(&v);
    let kind = plaquette_kind(a, b);
    if inner(a) && inner(b) {
        return true;
    }
    if inner(a) && (b == 0 || b == d) {
        return kind == CheckKind::X;
    }
    if inner(b) && (a == 0 || a == d) {
        return kind == CheckKind::Z;
    }
    false
}

/// Builds the distance-`d` rotated surface code. `d` must be odd and ≥ 3.
pub fn build_lattice(d: usize) -> Result<Lattice> {
    if d < 3 || d % 2 == 0 {
        return Err(Error::InvalidDistance(d));
    }
    let qubit = |col: usize, row: usize| row * d + col;
    let data_qubits = (0..d)
        .flat_map(|row| (0..d).map(move |col| (2 * col as i32 + 2, 2 * row as i32 + 2)))
        .collect::<Vec<_>>();

    let mut stabilizers = Vec::with_capacity(d * d - 1);
    for b in 0..=d {
        for a in 0..=d {
            if !plaquette_exists(d, a, b) {
                continue;
            }
            let mut support = Vec::with_capacity(4);
            for row in [b.wrapping_sub(1), b] {
                for col in [a.wrapping_sub(1), a] {
                    if row < d && col < d {
                        support.push(qubit(col, row));
                    }
                }
            }
            support.sort_unstable();
            stabilizers.push(Stabilizer {
                id: stabilizers.len(),
                kind: plaquette_kind(a, b),
                coord: (2 * a as i32 + 1, 2 * b as i32 + 1),
                support,
                neighbors: [None; 4],
                hops_z_boundary: b.min(d - b),
                hops_x_boundary: a.min(d - a),
            });
        }
    }

    let index: HashMap<(i32, i32), usize> =
        stabilizers.iter().map(|s| (s.coord, s.id)).collect();
    for s in stabilizers.iter_mut() {
        for (slot, (dx, dy)) in NEIGHBOR_OFFSETS.iter().enumerate() {
            s.neighbors[slot] = index.get(&(s.coord.0 + dx, s.coord.1 + dy)).copied();
        }
    }

    let mut qubit_checks = vec![Vec::new(); d * d];
    for s in &stabilizers {
        for &q in &s.support {
            qubit_checks[q].push(s.id);
        }
    }

    Ok(Lattice {
        distance: d,
        data_qubits,
        stabilizers,
        logical_z_support: (0..d).map(|col| qubit(col, 0)).collect(),
        logical_x_support: (0..d).map(|row| qubit(0, row)).collect(),
        qubit_checks,
    })
}

/// Same-type neighbors of `stab_id` in NE, NW, SE, SW order.
pub fn same_type_neighbors(lattice: &Lattice, stab_id: usize) -> Result<[Option<usize>; 4]> {
    Ok(lattice.stabilizer(stab_id)?.neighbors)
}

/// Raw hop counts `(to Z boundary, to X boundary)`.
pub fn boundary_hops(lattice: &Lattice, stab_id: usize) -> Result<(usize, usize)> {
    let s = lattice.stabilizer(stab_id)?;
    Ok((s.hops_z_boundary, s.hops_x_boundary))
}
