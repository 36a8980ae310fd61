//! Minimum-weight perfect matching baseline.
//!
//! Each basis gets its own graph: the same-type checks plus one virtual
//! boundary node. Spacetime defects are matched either pairwise or to the
//! boundary. Instances with at most [`EXACT_LIMIT`] defects are solved exactly
//! with a subset dynamic program; larger ones fall back to greedy pairing and
//! are flagged.
//!
//! Edge weights are log-likelihood ratios. A space hop costs
//! `ln((1 - q) / q)` with `q = 2p/3`, the chance that one data qubit flips a
//! given check type in one round under depolarizing noise. A time hop costs
//! `ln((1 - p_meas) / p_meas)`.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::lattice::{CheckKind, Lattice};
use crate::noise::{NoiseConfig, NoiseKind, Shot};

/// Largest defect count solved exactly.
pub const EXACT_LIMIT: usize = 20;

const PROB_FLOOR: f64 = 1e-12;
const PROB_CEIL: f64 = 0.5 - 1e-9;

fn log_odds_weight(q: f64) -> f64 {
    let q = q.clamp(PROB_FLOOR, PROB_CEIL);
    ((1.0 - q) / q).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingGraph {
    pub basis: CheckKind,
    /// Stabilizer ids of the basis, in lattice order.
    pub nodes: Vec<usize>,
    /// Stabilizer id to node index.
    pub node_of: Vec<Option<usize>>,
    /// Shortest-path hop counts between nodes, `n × n`.
    pub hops: Vec<u32>,
    /// Logical-support crossing parity of those shortest paths.
    pub parity: Vec<u8>,
    pub boundary_hops: Vec<u32>,
    pub boundary_parity: Vec<u8>,
    pub space_weight: f64,
    pub time_weight: f64,
}

/// One spacetime defect on a matching graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Defect {
    pub node: usize,
    pub round: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Match {
    Pair(usize, usize),
    Boundary(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub matches: Vec<Match>,
    pub weight: f64,
    pub prediction: u8,
    /// False when the greedy fallback was used.
    pub exact: bool,
}

impl MatchingGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn pair_weight(&self, a: Defect, b: Defect) -> f64 {
        let n = self.nodes.len();
        let dt = a.round.abs_diff(b.round) as f64;
        self.hops[a.node * n + b.node] as f64 * self.space_weight + dt * self.time_weight
    }

    pub fn pair_parity(&self, a: Defect, b: Defect) -> u8 {
        self.parity[a.node * self.nodes.len() + b.node]
    }

    pub fn boundary_weight(&self, a: Defect) -> f64 {
        self.boundary_hops[a.node] as f64 * self.space_weight
    }

    /// Defects of this basis in a shot, in (round, stabilizer) order.
    pub fn defects_of(&self, shot: &Shot) -> Vec<Defect> {
        let ev = &shot.events;
        let mut out = Vec::new();
        for t in 0..ev.records {
            for (i, &b) in ev.record(t).iter().enumerate() {
                if b != 0 {
                    if let Some(node) = self.node_of[i] {
                        out.push(Defect { node, round: t });
                    }
                }
            }
        }
        out
    }
}

/// Builds the matching graph of `basis` (Z checks predict λ_Z, X checks λ_X).
pub fn build_matching_graph(
    lattice: &Lattice,
    noise: &NoiseConfig,
    basis: CheckKind,
) -> MatchingGraph {
    let nodes = lattice.stabilizers_of_kind(basis);
    let mut node_of = vec![None; lattice.num_stabilizers()];
    for (k, &s) in nodes.iter().enumerate() {
        node_of[s] = Some(k);
    }
    let logical = match basis {
        CheckKind::Z => &lattice.logical_z_support,
        CheckKind::X => &lattice.logical_x_support,
    };
    let on_logical: Vec<u8> = (0..lattice.num_data_qubits())
        .map(|q| u8::from(logical.contains(&q)))
        .collect();

    // Edges are data qubits: between the two same-type checks touching the
    // qubit, or to the boundary when only one check touches it.
    let n = nodes.len();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut boundary_edges: Vec<(usize, usize)> = Vec::new();
    for q in 0..lattice.num_data_qubits() {
        let touching: Vec<usize> = lattice
            .checks_touching(q, basis)
            .map(|s| node_of[s].unwrap())
            .collect();
        match touching.as_slice() {
            [a] => boundary_edges.push((*a, q)),
            [a, b] => {
                adj[*a].push((*b, q));
                adj[*b].push((*a, q));
            }
            _ => {}
        }
    }

    let mut hops = vec![u32::MAX; n * n];
    let mut parity = vec![0u8; n * n];
    for src in 0..n {
        let mut queue = VecDeque::from([src]);
        hops[src * n + src] = 0;
        while let Some(u) = queue.pop_front() {
            for &(v, q) in &adj[u] {
                if hops[src * n + v] == u32::MAX {
                    hops[src * n + v] = hops[src * n + u] + 1;
                    parity[src * n + v] = parity[src * n + u] ^ on_logical[q];
                    queue.push_back(v);
                }
            }
        }
    }

    let mut boundary_hops = vec![u32::MAX; n];
    let mut boundary_parity = vec![0u8; n];
    let mut queue = VecDeque::new();
    for &(a, q) in &boundary_edges {
        if boundary_hops[a] == u32::MAX {
            boundary_hops[a] = 1;
            boundary_parity[a] = on_logical[q];
            queue.push_back(a);
        }
    }
    while let Some(u) = queue.pop_front() {
        for &(v, q) in &adj[u] {
            if boundary_hops[v] == u32::MAX {
                boundary_hops[v] = boundary_hops[u] + 1;
                boundary_parity[v] = boundary_parity[u] ^ on_logical[q];
                queue.push_back(v);
            }
        }
    }

    let space_weight = log_odds_weight(2.0 * noise.p / 3.0);
    let time_weight = match noise.kind {
        NoiseKind::CodeCapacity => space_weight,
        NoiseKind::Phenomenological => log_odds_weight(noise.measurement_flip_rate()),
    };
    MatchingGraph {
        basis,
        nodes,
        node_of,
        hops,
        parity,
        boundary_hops,
        boundary_parity,
        space_weight,
        time_weight,
    }
}

/// Dense weight/parity description of one matching instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingProblem {
    pub k: usize,
    pub pair_weight: Vec<f64>,
    pub pair_parity: Vec<u8>,
    pub boundary_weight: Vec<f64>,
    pub boundary_parity: Vec<u8>,
}

impl MatchingProblem {
    pub fn from_defects(defects: &[Defect], graph: &MatchingGraph) -> Self {
        let k = defects.len();
        let mut pair_weight = vec![0.0; k * k];
        let mut pair_parity = vec![0u8; k * k];
        for i in 0..k {
            for j in 0..k {
                pair_weight[i * k + j] = graph.pair_weight(defects[i], defects[j]);
                pair_parity[i * k + j] = graph.pair_parity(defects[i], defects[j]);
            }
        }
        Self {
            k,
            pair_weight,
            pair_parity,
            boundary_weight: defects.iter().map(|&d| graph.boundary_weight(d)).collect(),
            boundary_parity: defects.iter().map(|&d| graph.boundary_parity[d.node]).collect(),
        }
    }

    #[inline]
    pub fn w(&self, i: usize, j: usize) -> f64 {
        self.pair_weight[i * self.k + j]
    }

    pub fn evaluate(&self, matches: &[Match]) -> (f64, u8) {
        matches.iter().fold((0.0, 0u8), |(w, p), m| match *m {
            Match::Pair(i, j) => (w + self.w(i, j), p ^ self.pair_parity[i * self.k + j]),
            Match::Boundary(i) => (w + self.boundary_weight[i], p ^ self.boundary_parity[i]),
        })
    }

    /// Multiplies every edge weight by an independent `exp(N(0, scale²))`
    /// factor. Pair weights stay symmetric.
    pub fn perturbed(&self, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut out = self.clone();
        if scale == 0.0 {
            return out;
        }
        let normal = Normal::new(0.0, scale).expect("finite scale");
        for i in 0..self.k {
            for j in i + 1..self.k {
                let f = normal.sample(rng).exp();
                out.pair_weight[i * self.k + j] *= f;
                out.pair_weight[j * self.k + i] *= f;
            }
            out.boundary_weight[i] *= normal.sample(rng).exp();
        }
        out
    }

    pub fn solve(&self) -> MatchResult {
        if self.k <= EXACT_LIMIT {
            self.solve_exact()
        } else {
            self.solve_greedy()
        }
    }

    fn tolerance(v: f64) -> f64 {
        1e-9 * v.abs().max(1.0)
    }

    /// Subset DP. `cost[mask]` is the cheapest way to finish once the defects
    /// in `mask` are matched; the lowest unmatched defect is always resolved
    /// next. Among optimal pairings the one with the lexicographically
    /// smallest partner list wins (partners ascending, boundary last).
    pub fn solve_exact(&self) -> MatchResult {
        let k = self.k;
        assert!(k <= EXACT_LIMIT, "exact matching limited to {EXACT_LIMIT} defects");
        if k == 0 {
            return MatchResult {
                matches: Vec::new(),
                weight: 0.0,
                prediction: 0,
                exact: true,
            };
        }
        let full = (1usize << k) - 1;
        let mut cost = vec![f64::INFINITY; full + 1];
        cost[full] = 0.0;
        for mask in (0..full).rev() {
            let i = (!mask).trailing_zeros() as usize;
            let base = mask | (1 << i);
            let mut best = self.boundary_weight[i] + cost[base];
            let mut free = !base & full;
            while free != 0 {
                let j = free.trailing_zeros() as usize;
                free &= free - 1;
                let c = self.w(i, j) + cost[base | (1 << j)];
                if c < best {
                    best = c;
                }
            }
            cost[mask] = best;
        }

        let mut matches = Vec::with_capacity(k);
        let mut mask = 0usize;
        while mask != full {
            let i = (!mask).trailing_zeros() as usize;
            let base = mask | (1 << i);
            let target = cost[mask] + Self::tolerance(cost[mask]);
            let mut chosen = None;
            let mut free = !base & full;
            while free != 0 {
                let j = free.trailing_zeros() as usize;
                free &= free - 1;
                if self.w(i, j) + cost[base | (1 << j)] <= target {
                    chosen = Some(j);
                    break;
                }
            }
            match chosen {
                Some(j) => {
                    matches.push(Match::Pair(i, j));
                    mask = base | (1 << j);
                }
                None => {
                    matches.push(Match::Boundary(i));
                    mask = base;
                }
            }
        }
        let (weight, prediction) = self.evaluate(&matches);
        MatchResult {
            matches,
            weight,
            prediction,
            exact: true,
        }
    }

    /// Greedy: repeatedly commit the globally cheapest remaining edge.
    pub fn solve_greedy(&self) -> MatchResult {
        let k = self.k;
        let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(k * (k + 1) / 2);
        for i in 0..k {
            edges.push((self.boundary_weight[i], i, usize::MAX));
            for j in i + 1..k {
                edges.push((self.w(i, j), i, j));
            }
        }
        edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut used = vec![false; k];
        let mut matches = Vec::with_capacity(k);
        for (_, i, j) in edges {
            if used[i] || (j != usize::MAX && used[j]) {
                continue;
            }
            used[i] = true;
            if j == usize::MAX {
                matches.push(Match::Boundary(i));
            } else {
                used[j] = true;
                matches.push(Match::Pair(i, j));
            }
        }
        matches.sort_by_key(|m| match *m {
            Match::Pair(i, _) | Match::Boundary(i) => i,
        });
        let (weight, prediction) = self.evaluate(&matches);
        MatchResult {
            matches,
            weight,
            prediction,
            exact: false,
        }
    }
}

/// Matches one basis' defects. An empty list gives an empty matching.
pub fn decode_mwpm(defects: &[Defect], graph: &MatchingGraph) -> MatchResult {
    MatchingProblem::from_defects(defects, graph).solve()
}

/// Both bases of a lattice under one noise model.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingGraphs {
    pub z: MatchingGraph,
    pub x: MatchingGraph,
}

impl MatchingGraphs {
    pub fn new(lattice: &Lattice, noise: &NoiseConfig) -> Self {
        Self {
            z: build_matching_graph(lattice, noise, CheckKind::Z),
            x: build_matching_graph(lattice, noise, CheckKind::X),
        }
    }
}

/// `[λ̂_Z, λ̂_X]` from independent per-basis matchings.
pub fn decode_shot_mwpm(shot: &Shot, graphs: &MatchingGraphs) -> [u8; 2] {
    let z = decode_mwpm(&graphs.z.defects_of(shot), &graphs.z);
    let x = decode_mwpm(&graphs.x.defects_of(shot), &graphs.x);
    [z.prediction, x.prediction]
}

/// Perturbed-weights ensemble. Member 0 uses the unperturbed weights, members
/// `1..m` each draw fresh multiplicative log-normal noise. Returns the
/// majority prediction; an even split falls back to member 0.
pub fn libra_vote(defects: &[Defect], graph: &MatchingGraph, m: usize, scale: f64, seed: u64) -> u8 {
    assert!(m >= 1 && scale >= 0.0);
    let problem = MatchingProblem::from_defects(defects, graph);
    let reference = problem.solve().prediction;
    if m == 1 || defects.is_empty() {
        return reference;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ones = usize::from(reference == 1);
    for _ in 1..m {
        ones += usize::from(problem.perturbed(scale, &mut rng).solve().prediction == 1);
    }
    let zeros = m - ones;
    match ones.cmp(&zeros) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => 0,
        std::cmp::Ordering::Equal => reference,
    }
}

/// Libra ensemble over both bases of a shot.
pub fn decode_shot_libra(shot: &Shot, graphs: &MatchingGraphs, m: usize, scale: f64, seed: u64) -> [u8; 2] {
    [
        libra_vote(&graphs.z.defects_of(shot), &graphs.z, m, scale, seed),
        libra_vote(
            &graphs.x.defects_of(shot),
            &graphs.x,
            m,
            scale,
            seed ^ 0xA5A5_5A5A_0F0F_F0F0,
        ),
    ]
}
