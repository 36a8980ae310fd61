//! Sparse defect extraction: one 13-feature token per active detection event,
//! sorted by (round, stabilizer id), then padded into fixed-size batches.
//!
//! Feature layout (see the `F_*` constants):
//!
//! | idx | feature | range |
//! |-----|---------|-------|
//! | 0,1 | x, y: stabilizer coordinate / `2d + 1` | [0, 1] |
//! | 2   | t / T, rounds 1-indexed, T = event records | (0, 1] |
//! | 3   | type, X = 0, Z = 1 | {0, 1} |
//! | 4-7 | same-type neighbor fired this round (NE, NW, SE, SW) | {0, 1} |
//! | 8,9 | same check fired at t-1 / t+1 (0 outside the record range) | {0, 1} |
//! | 10,11 | hops to Z / X boundary over `d - 1` | [0, 1] |
//! | 12  | reconstructed measurement, XOR of events up to t | {0, 1} |

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::noise::Shot;

pub const NUM_FEATURES: usize = 13;
pub const F_X: usize = 0;
pub const F_Y: usize = 1;
pub const F_T: usize = 2;
pub const F_TYPE: usize = 3;
pub const F_NEIGHBORS: usize = 4;
pub const F_PREV: usize = 8;
pub const F_NEXT: usize = 9;
pub const F_BZ: usize = 10;
pub const F_BX: usize = 11;
pub const F_MEAS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectToken {
    pub stabilizer: usize,
    /// 1-indexed event record.
    pub round: usize,
    pub features: [f32; NUM_FEATURES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectSequence {
    pub tokens: Vec<DefectToken>,
    /// Active defect count before any truncation.
    pub k: usize,
    pub truncated: bool,
    pub observables: [u8; 2],
}

/// `m[t] = d[0] ^ … ^ d[t]`.
pub fn cumulative_xor(events: &[u8]) -> Result<Vec<u8>> {
    let mut acc = 0u8;
    events
        .iter()
        .map(|&e| {
            if e > 1 {
                return Err(Error::Domain(format!("non-binary event value {e}")));
            }
            acc ^= e;
            Ok(acc)
        })
        .collect()
}

/// Converts a shot into its sorted defect sequence.
pub fn extract_defects(shot: &Shot, lattice: &Lattice) -> Result<DefectSequence> {
    let n = lattice.num_stabilizers();
    let ev = &shot.events;
    if shot.distance != lattice.distance || ev.checks != n || ev.bits.len() != n * ev.records {
        return Err(Error::Dimension(format!(
            "shot (d={}, {} checks) does not match lattice d={}",
            shot.distance, ev.checks, lattice.distance
        )));
    }
    let records = ev.records;
    let scale = lattice.max_coord() as f32;
    let hop_scale = (lattice.distance - 1) as f32;
    let mut cumulative = vec![0u8; n];
    let mut tokens = Vec::new();
    for t in 0..records {
        let row = ev.record(t);
        for i in 0..n {
            cumulative[i] ^= row[i];
        }
        for (i, &fired) in row.iter().enumerate() {
            if fired == 0 {
                continue;
            }
            let s = &lattice.stabilizers[i];
            let mut f = [0f32; NUM_FEATURES];
            f[F_X] = s.coord.0 as f32 / scale;
            f[F_Y] = s.coord.1 as f32 / scale;
            f[F_T] = (t + 1) as f32 / records as f32;
            f[F_TYPE] = s.kind.as_bit() as f32;
            for (slot, nb) in s.neighbors.iter().enumerate() {
                if let Some(j) = *nb {
                    f[F_NEIGHBORS + slot] = row[j] as f32;
                }
            }
            if t > 0 {
                f[F_PREV] = ev.get(t - 1, i) as f32;
            }
            if t + 1 < records {
                f[F_NEXT] = ev.get(t + 1, i) as f32;
            }
            f[F_BZ] = s.hops_z_boundary as f32 / hop_scale;
            f[F_BX] = s.hops_x_boundary as f32 / hop_scale;
            f[F_MEAS] = cumulative[i] as f32;
            tokens.push(DefectToken {
                stabilizer: i,
                round: t + 1,
                features: f,
            });
        }
    }
    Ok(DefectSequence {
        k: tokens.len(),
        tokens,
        truncated: false,
        observables: shot.observables,
    })
}

/// Fixed-shape batch: `features` is `B × k_max × 13` row-major, `mask` is
/// `B × k_max` with ones on the first `lengths[b]` positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub batch_size: usize,
    pub k_max: usize,
    pub features: Vec<f32>,
    pub mask: Vec<f32>,
    /// `[λ_Z, λ_X]` per row; single-head models use column 0.
    pub labels: Vec<[u8; 2]>,
    /// Tokens kept per row (`min(k, k_max)`).
    pub lengths: Vec<usize>,
    /// Original defect count per row.
    pub k: Vec<usize>,
    pub truncated: Vec<bool>,
}

impl Batch {
    /// Feature rows of the real tokens of row `b`.
    pub fn row_features(&self, b: usize) -> &[f32] {
        let start = b * self.k_max * NUM_FEATURES;
        &self.features[start..start + self.lengths[b] * NUM_FEATURES]
    }

    pub fn row_features_mut(&mut self, b: usize) -> &mut [f32] {
        let start = b * self.k_max * NUM_FEATURES;
        let len = self.lengths[b] * NUM_FEATURES;
        &mut self.features[start..start + len]
    }

    /// Checks the mask is a prefix of ones matching `lengths`.
    pub fn validate(&self) -> Result<()> {
        let b = self.batch_size;
        if self.features.len() != b * self.k_max * NUM_FEATURES
            || self.mask.len() != b * self.k_max
            || self.labels.len() != b
            || self.lengths.len() != b
        {
            return Err(Error::Dimension("batch buffers disagree with B × k_max".into()));
        }
        for row in 0..b {
            let len = self.lengths[row];
            if len > self.k_max {
                return Err(Error::Dimension(format!("row {row}: length exceeds k_max")));
            }
            for j in 0..self.k_max {
                let want = if j < len { 1.0 } else { 0.0 };
                if self.mask[row * self.k_max + j] != want {
                    return Err(Error::Dimension(format!(
                        "row {row}: mask is not a prefix of {len} ones"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Copies the given rows into a new batch.
    pub fn select(&self, rows: &[usize]) -> Batch {
        let stride = self.k_max * NUM_FEATURES;
        let mut out = Batch {
            batch_size: rows.len(),
            k_max: self.k_max,
            features: Vec::with_capacity(rows.len() * stride),
            mask: Vec::with_capacity(rows.len() * self.k_max),
            labels: Vec::with_capacity(rows.len()),
            lengths: Vec::with_capacity(rows.len()),
            k: Vec::with_capacity(rows.len()),
            truncated: Vec::with_capacity(rows.len()),
        };
        for &r in rows {
            out.features
                .extend_from_slice(&self.features[r * stride..(r + 1) * stride]);
            out.mask
                .extend_from_slice(&self.mask[r * self.k_max..(r + 1) * self.k_max]);
            out.labels.push(self.labels[r]);
            out.lengths.push(self.lengths[r]);
            out.k.push(self.k[r]);
            out.truncated.push(self.truncated[r]);
        }
        out
    }
}

/// Pads (or truncates, keeping the earliest tokens) each sequence to `k_max`.
pub fn pad_and_mask(sequences: &[DefectSequence], k_max: usize) -> Result<Batch> {
    if k_max == 0 {
        return Err(Error::Config("k_max must be at least 1".into()));
    }
    let stride = k_max * NUM_FEATURES;
    let rows: Vec<(Vec<f32>, Vec<f32>, usize)> = sequences
        .par_iter()
        .map(|seq| {
            let len = seq.tokens.len().min(k_max);
            let mut feats = vec![0f32; stride];
            let mut mask = vec![0f32; k_max];
            for (j, tok) in seq.tokens.iter().take(len).enumerate() {
                feats[j * NUM_FEATURES..(j + 1) * NUM_FEATURES].copy_from_slice(&tok.features);
                mask[j] = 1.0;
            }
            (feats, mask, len)
        })
        .collect();
    let mut batch = Batch {
        batch_size: sequences.len(),
        k_max,
        features: Vec::with_capacity(sequences.len() * stride),
        mask: Vec::with_capacity(sequences.len() * k_max),
        labels: sequences.iter().map(|s| s.observables).collect(),
        lengths: Vec::with_capacity(sequences.len()),
        k: sequences.iter().map(|s| s.k).collect(),
        truncated: Vec::with_capacity(sequences.len()),
    };
    for (seq, (f, m, len)) in sequences.iter().zip(rows) {
        batch.features.extend_from_slice(&f);
        batch.mask.extend_from_slice(&m);
        batch.lengths.push(len);
        batch.truncated.push(seq.truncated || seq.tokens.len() > k_max);
    }
    Ok(batch)
}

/// Extracts and pads a slice of shots in one go.
pub fn batch_from_shots(shots: &[Shot], lattice: &Lattice, k_max: usize) -> Result<Batch> {
    let seqs = shots
        .par_iter()
        .map(|s| extract_defects(s, lattice))
        .collect::<Result<Vec<_>>>()?;
    pad_and_mask(&seqs, k_max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityStats {
    pub distance: usize,
    pub rounds: usize,
    pub shots: usize,
    /// `(d² − 1) · R`.
    pub dense_size: usize,
    pub mean_k: f64,
    pub p99_k: usize,
    /// `mean_k / dense_size`.
    pub ratio: f64,
}

/// Nearest-rank percentile of a sample of counts.
pub fn percentile(values: &[usize], q: f64) -> usize {
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

pub fn sparsity_stats(shots: &[Shot], lattice: &Lattice, rounds: usize) -> Result<SparsityStats> {
    if shots.is_empty() {
        return Err(Error::Domain("sparsity statistics need at least one shot".into()));
    }
    let counts: Vec<usize> = shots.iter().map(|s| s.events.count_ones()).collect();
    let dense = lattice.num_stabilizers() * rounds;
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    Ok(SparsityStats {
        distance: lattice.distance,
        rounds,
        shots: shots.len(),
        dense_size: dense,
        mean_k: mean,
        p99_k: percentile(&counts, 0.99),
        ratio: mean / dense as f64,
    })
}

/// `ceil(1.5 × p99(k))`, at least 1.
pub fn default_k_max(counts: &[usize]) -> usize {
    if counts.is_empty() {
        return 1;
    }
    ((percentile(counts, 0.99) as f64 * 1.5).ceil() as usize).max(1)
}

// ---------------------------------------------------------------------------
// Batch tensor file
//
// header (48 bytes): magic "QBAT" | version u8 | 3 reserved
//                    | B u32 | k_max u32 | features u32 | heads u32
//                    | mask_offset u64 | label_offset u64 | k_offset u64
// body: features f32[B·k_max·13] | mask f32[B·k_max] | labels f32[B·2]
//       | k u32[B]
// Little-endian throughout, row-major.
// ---------------------------------------------------------------------------

pub const BATCH_MAGIC: &[u8; 4] = b"QBAT";
pub const BATCH_VERSION: u8 = 1;
const BATCH_HEADER: usize = 48;

pub fn write_batch<W: Write>(mut w: W, batch: &Batch) -> Result<()> {
    let b = batch.batch_size;
    let mask_offset = BATCH_HEADER + batch.features.len() * 4;
    let label_offset = mask_offset + batch.mask.len() * 4;
    let k_offset = label_offset + b * 2 * 4;
    let mut out = Vec::with_capacity(k_offset + b * 4);
    out.extend_from_slice(BATCH_MAGIC);
    out.extend_from_slice(&[BATCH_VERSION, 0, 0, 0]);
    for v in [b, batch.k_max, NUM_FEATURES, 2] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in [mask_offset, label_offset, k_offset] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for v in batch.features.iter().chain(&batch.mask) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for l in &batch.labels {
        out.extend_from_slice(&(l[0] as f32).to_le_bytes());
        out.extend_from_slice(&(l[1] as f32).to_le_bytes());
    }
    for &k in &batch.k {
        out.extend_from_slice(&(k as u32).to_le_bytes());
    }
    w.write_all(&out)?;
    Ok(())
}

pub fn read_batch<R: Read>(mut r: R) -> Result<Batch> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < BATCH_HEADER || &buf[..4] != BATCH_MAGIC {
        return Err(Error::Format("not a batch tensor file".into()));
    }
    if buf[4] != BATCH_VERSION {
        return Err(Error::Version {
            expected: BATCH_VERSION,
            found: buf[4],
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap()) as usize;
    let (b, k_max, nf) = (u32_at(8), u32_at(12), u32_at(16));
    if nf != NUM_FEATURES {
        return Err(Error::Dimension(format!("expected {NUM_FEATURES} features, file has {nf}")));
    }
    let (mask_offset, label_offset, k_offset) = (u64_at(24), u64_at(32), u64_at(40));
    if k_offset + b * 4 != buf.len() {
        return Err(Error::Format("batch file length disagrees with header".into()));
    }
    let floats = |start: usize, count: usize| -> Vec<f32> {
        (0..count)
            .map(|i| f32::from_le_bytes(buf[start + 4 * i..start + 4 * i + 4].try_into().unwrap()))
            .collect()
    };
    let features = floats(BATCH_HEADER, b * k_max * NUM_FEATURES);
    let mask = floats(mask_offset, b * k_max);
    let labels_f = floats(label_offset, b * 2);
    let k: Vec<usize> = (0..b).map(|i| u32_at(k_offset + 4 * i)).collect();
    let lengths: Vec<usize> = (0..b)
        .map(|row| mask[row * k_max..(row + 1) * k_max].iter().filter(|&&m| m != 0.0).count())
        .collect();
    let batch = Batch {
        batch_size: b,
        k_max,
        features,
        mask,
        labels: labels_f.chunks(2).map(|c| [c[0] as u8, c[1] as u8]).collect(),
        truncated: k.iter().map(|&k| k > k_max).collect(),
        lengths,
        k,
    };
    batch.validate()?;
    Ok(batch)
}

pub fn save_batch(path: impl AsRef<Path>, batch: &Batch) -> Result<()> {
    write_batch(std::io::BufWriter::new(std::fs::File::create(path)?), batch)
}

pub fn load_batch(path: impl AsRef<Path>) -> Result<Batch> {
    read_batch(std::fs::File::open(path)?)
}
