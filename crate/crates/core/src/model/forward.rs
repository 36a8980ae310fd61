use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ops::{c, dot, gelu, layer_norm, linear, rms_norm, silu, softplus, Real};
use super::{
    layer_base, readout_base, slot, Parameters, ReadoutKind, EMBED_B1, EMBED_B2, EMBED_N1,
    EMBED_N2, EMBED_W1, EMBED_W2,
};
use crate::defects::{Batch, NUM_FEATURES};
use crate::error::{Error, Result};

/// Logits of a batch, `heads` per row (λ_Z first).
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub heads: usize,
    pub logits: Vec<f64>,
}

impl Predictions {
    pub fn rows(&self) -> usize {
        self.logits.len() / self.heads
    }

    pub fn logit(&self, row: usize, head: usize) -> f64 {
        self.logits[row * self.heads + head]
    }

    pub fn probability(&self, row: usize, head: usize) -> f64 {
        super::ops::sigmoid(self.logit(row, head))
    }

    /// `λ̂ = 1` iff `σ(z) > 0.5`, i.e. `z > 0`.
    pub fn predicted(&self, row: usize, head: usize) -> u8 {
        (self.logit(row, head) > 0.0) as u8
    }

    /// Predicted `[λ_Z, λ_X]`; the second entry is 0 for single-head models.
    pub fn observables(&self, row: usize) -> [u8; 2] {
        let mut out = [0u8; 2];
        for h in 0..self.heads {
            out[h] = self.predicted(row, h);
        }
        out
    }
}

pub(crate) struct EmbedTape<T> {
    pub f: Vec<T>,
    pub xhat1: Vec<T>,
    pub is1: Vec<T>,
    pub n1: Vec<T>,
    pub g: Vec<T>,
    pub xhat2: Vec<T>,
    pub is2: Vec<T>,
}

pub(crate) struct MambaTape<T> {
    pub x: Vec<T>,
    /// Masked conv input (first half of the input projection).
    pub xb: Vec<T>,
    pub z: Vec<T>,
    pub xc: Vec<T>,
    pub u: Vec<T>,
    pub dt_pre: Vec<T>,
    pub delta: Vec<T>,
    pub bm: Vec<T>,
    pub cm: Vec<T>,
    /// States after each step, `k × I × N`.
    pub states: Vec<f64>,
    pub y: Vec<T>,
    pub gated: Vec<T>,
    pub mask: Vec<T>,
}

pub(crate) struct GateTape<T> {
    pub v: Vec<T>,
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub q: Vec<T>,
}

pub(crate) struct LayerTape<T> {
    pub h_in: Vec<T>,
    pub inv1: Vec<T>,
    pub mamba: MambaTape<T>,
    pub drop1: Option<Vec<T>>,
    pub h_mid: Vec<T>,
    pub inv2: Vec<T>,
    pub gate: GateTape<T>,
    pub drop2: Option<Vec<T>>,
}

pub(crate) enum ReadoutTape<T> {
    Mlp {
        pre: Vec<Vec<T>>,
        act: Vec<Vec<T>>,
    },
    Resblock {
        /// Residual stream before each block and after the last.
        r: Vec<Vec<T>>,
        inv: Vec<T>,
        nrm: Vec<Vec<T>>,
        a: Vec<Vec<T>>,
        g: Vec<Vec<T>>,
    },
}

pub(crate) struct SequenceTape<T> {
    pub k: usize,
    pub embed: EmbedTape<T>,
    pub layers: Vec<LayerTape<T>>,
    pub pooled: Vec<T>,
    pub readout: ReadoutTape<T>,
    pub logits: Vec<T>,
}

fn embed_tape<T: Real>(f: &[T], k: usize, p: &Parameters<T>) -> (Vec<T>, EmbedTape<T>) {
    let d = p.config.d_model;
    let a1 = linear(f, k, p.data(EMBED_W1), d, Some(p.data(EMBED_B1)));
    let (n1, xhat1, is1) = layer_norm(&a1, d, p.data(EMBED_N1));
    let g: Vec<T> = n1.iter().map(|&v| gelu(v)).collect();
    let a2 = linear(&g, k, p.data(EMBED_W2), d, Some(p.data(EMBED_B2)));
    let (h, xhat2, is2) = layer_norm(&a2, d, p.data(EMBED_N2));
    let tape = EmbedTape {
        f: f.to_vec(),
        xhat1,
        is1,
        n1,
        g,
        xhat2,
        is2,
    };
    (h, tape)
}

/// Per-token embedder `LN(W₂ GELU(LN(W₁ f + b₁)) + b₂)`; `features` holds
/// rows of 13.
pub fn embed<T: Real>(features: &[T], params: &Parameters<T>) -> Result<Vec<T>> {
    if features.len() % NUM_FEATURES != 0 {
        return Err(Error::Dimension(format!(
            "feature buffer of {} is not a multiple of {NUM_FEATURES}",
            features.len()
        )));
    }
    Ok(embed_tape(features, features.len() / NUM_FEATURES, params).0)
}

fn mamba_tape<T: Real>(
    x: &[T],
    k: usize,
    p: &Parameters<T>,
    layer: usize,
    mask: Vec<T>,
) -> (Vec<T>, MambaTape<T>) {
    let cfg = &p.config;
    let (d, i, n, kc) = (cfg.d_model, cfg.d_inner(), cfg.d_state, cfg.d_conv);
    let base = layer_base(layer);
    let xz = linear(x, k, p.data(base + slot::IN_PROJ), 2 * i, None);
    let mut xb = vec![T::zero(); k * i];
    let mut z = vec![T::zero(); k * i];
    for t in 0..k {
        let row = &xz[t * 2 * i..(t + 1) * 2 * i];
        for ch in 0..i {
            xb[t * i + ch] = row[ch] * mask[t];
        }
        z[t * i..(t + 1) * i].copy_from_slice(&row[i..]);
    }

    // Causal depthwise convolution; tap kc-1 is the current position.
    let cw = p.data(base + slot::CONV_W);
    let cb = p.data(base + slot::CONV_B);
    let mut xc = vec![T::zero(); k * i];
    for t in 0..k {
        for ch in 0..i {
            let mut acc = cb[ch];
            for j in 0..kc {
                let src = t as isize - (kc - 1 - j) as isize;
                if src >= 0 {
                    acc += cw[ch * kc + j] * xb[src as usize * i + ch];
                }
            }
            xc[t * i + ch] = acc;
        }
    }
    let u: Vec<T> = xc.iter().map(|&v| silu(v)).collect();

    let dt_pre = linear(
        &u,
        k,
        p.data(base + slot::DT_W),
        i,
        Some(p.data(base + slot::DT_B)),
    );
    let delta: Vec<T> = dt_pre.iter().map(|&v| softplus(v)).collect();
    let bm = linear(&u, k, p.data(base + slot::B_W), n, None);
    let cm = linear(&u, k, p.data(base + slot::C_W), n, None);

    let a: Vec<f64> = p
        .data(base + slot::A_LOG)
        .iter()
        .map(|v| -v.to_f64().unwrap().exp())
        .collect();
    let dskip = p.data(base + slot::D_SKIP);
    let mut states = vec![0.0f64; k * i * n];
    let mut y = vec![T::zero(); k * i];
    for t in 0..k {
        let bt: Vec<f64> = bm[t * n..(t + 1) * n].iter().map(|v| v.to_f64().unwrap()).collect();
        let ct: Vec<f64> = cm[t * n..(t + 1) * n].iter().map(|v| v.to_f64().unwrap()).collect();
        for ch in 0..i {
            let dt = delta[t * i + ch].to_f64().unwrap();
            let ut = u[t * i + ch].to_f64().unwrap();
            let ar = &a[ch * n..(ch + 1) * n];
            let off = (t * i + ch) * n;
            let mut acc = 0.0f64;
            for s in 0..n {
                let da = dt * ar[s];
                let prev = if t > 0 { states[off - i * n + s] } else { 0.0 };
                let cur = da.exp() * prev + da.exp_m1() / ar[s] * bt[s] * ut;
                states[off + s] = cur;
                acc += ct[s] * cur;
            }
            y[t * i + ch] = c::<T>(acc) + dskip[ch] * u[t * i + ch];
        }
    }

    let mut gated = vec![T::zero(); k * i];
    for t in 0..k {
        for ch in 0..i {
            gated[t * i + ch] = y[t * i + ch] * silu(z[t * i + ch]) * mask[t];
        }
    }
    let out = linear(&gated, k, p.data(base + slot::OUT_PROJ), d, None);
    let tape = MambaTape {
        x: x.to_vec(),
        xb,
        z,
        xc,
        u,
        dt_pre,
        delta,
        bm,
        cm,
        states,
        y,
        gated,
        mask,
    };
    (out, tape)
}

/// Selective state-space block of one layer over a `len × d_model` sequence.
///
/// Positions with `mask == 0` feed zeros into the convolution and scan and
/// produce zero rows.
pub fn mamba_scan<T: Real>(
    x: &[T],
    params: &Parameters<T>,
    layer: usize,
    mask: &[f32],
) -> Result<Vec<T>> {
    let d = params.config.d_model;
    if layer >= params.config.layers {
        return Err(Error::Dimension(format!("layer {layer} out of range")));
    }
    if x.len() != mask.len() * d {
        return Err(Error::Dimension(format!(
            "sequence of {} values does not match {} positions × {d}",
            x.len(),
            mask.len()
        )));
    }
    if mask.len() > params.config.k_max {
        return Err(Error::Dimension(format!(
            "sequence length {} exceeds k_max {}",
            mask.len(),
            params.config.k_max
        )));
    }
    let m: Vec<T> = mask.iter().map(|&v| c::<T>(v as f64)).collect();
    Ok(mamba_tape(x, mask.len(), params, layer, m).0)
}

fn gate_tape<T: Real>(v: &[T], k: usize, p: &Parameters<T>, layer: usize) -> (Vec<T>, GateTape<T>) {
    let cfg = &p.config;
    let (d, g) = (cfg.d_model, cfg.gate_width());
    let base = layer_base(layer);
    let a = linear(v, k, p.data(base + slot::W_A), g, None);
    let b = linear(v, k, p.data(base + slot::W_B), g, None);
    let q: Vec<T> = a.iter().zip(&b).map(|(&a, &b)| silu(a) * b).collect();
    let out = linear(&q, k, p.data(base + slot::W_C), d, None);
    (
        out,
        GateTape {
            v: v.to_vec(),
            a,
            b,
            q,
        },
    )
}

/// `W_c (SiLU(W_a x) ⊙ W_b x)` applied per row.
pub fn gated_dense<T: Real>(x: &[T], params: &Parameters<T>, layer: usize) -> Result<Vec<T>> {
    let d = params.config.d_model;
    if x.len() % d != 0 || layer >= params.config.layers {
        return Err(Error::Dimension(format!(
            "gated dense expects rows of {d} and layer < {}",
            params.config.layers
        )));
    }
    Ok(gate_tape(x, x.len() / d, params, layer).0)
}

fn dropout_mask<T: Real>(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let keep = c::<T>(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

fn readout_tape<T: Real>(pooled: &[T], p: &Parameters<T>) -> (Vec<T>, ReadoutTape<T>) {
    let cfg = &p.config;
    let r = cfg.d_read;
    let base = readout_base(cfg);
    let mut logits = Vec::with_capacity(cfg.heads);
    match cfg.readout {
        ReadoutKind::Mlp => {
            let mut pre = Vec::new();
            let mut act = Vec::new();
            for h in 0..cfg.heads {
                let b = base + 4 * h;
                let a = linear(pooled, 1, p.data(b), r, Some(p.data(b + 1)));
                let g: Vec<T> = a.iter().map(|&v| gelu(v)).collect();
                logits.push(dot(p.data(b + 2), &g) + p.data(b + 3)[0]);
                pre.push(a);
                act.push(g);
            }
            (logits, ReadoutTape::Mlp { pre, act })
        }
        ReadoutKind::Resblock => {
            let mut cur = linear(pooled, 1, p.data(base), r, Some(p.data(base + 1)));
            let mut rs = Vec::new();
            let mut inv = Vec::new();
            let mut nrm = Vec::new();
            let mut av = Vec::new();
            let mut gv = Vec::new();
            for blk in 0..cfg.res_blocks {
                let b = base + 2 + 5 * blk;
                let (n, i) = rms_norm(&cur, r, p.data(b));
                let a = linear(&n, 1, p.data(b + 1), r, Some(p.data(b + 2)));
                let g: Vec<T> = a.iter().map(|&v| gelu(v)).collect();
                let o = linear(&g, 1, p.data(b + 3), r, Some(p.data(b + 4)));
                let next: Vec<T> = cur.iter().zip(&o).map(|(&x, &y)| x + y).collect();
                rs.push(cur);
                inv.push(i[0]);
                nrm.push(n);
                av.push(a);
                gv.push(g);
                cur = next;
            }
            let hb = base + 2 + 5 * cfg.res_blocks;
            for h in 0..cfg.heads {
                logits.push(dot(p.data(hb + 2 * h), &cur) + p.data(hb + 2 * h + 1)[0]);
            }
            rs.push(cur);
            (
                logits,
                ReadoutTape::Resblock {
                    r: rs,
                    inv,
                    nrm,
                    a: av,
                    g: gv,
                },
            )
        }
    }
}

/// Runs one sequence of `k` real tokens, recording everything the adjoint
/// needs. Dropout is active only when `rng` is given.
pub(crate) fn forward_sequence<T: Real>(
    params: &Parameters<T>,
    features: &[T],
    k: usize,
    mut rng: Option<&mut ChaCha8Rng>,
) -> SequenceTape<T> {
    let cfg = &params.config;
    let d = cfg.d_model;
    let (mut h, embed) = embed_tape(features, k, params);
    let mut layers = Vec::with_capacity(cfg.layers);
    let ones = vec![T::one(); k];
    for l in 0..cfg.layers {
        let base = layer_base(l);
        let (u0, inv1) = rms_norm(&h, d, params.data(base + slot::MIXER_NORM));
        let (mut m, mamba) = mamba_tape(&u0, k, params, l, ones.clone());
        let drop1 = match rng.as_deref_mut() {
            Some(r) if cfg.dropout > 0.0 => {
                let dm = dropout_mask::<T>(m.len(), cfg.dropout, r);
                m.iter_mut().zip(&dm).for_each(|(v, &s)| *v *= s);
                Some(dm)
            }
            _ => None,
        };
        let h_mid: Vec<T> = h.iter().zip(&m).map(|(&a, &b)| a + b).collect();
        let (v, inv2) = rms_norm(&h_mid, d, params.data(base + slot::GATE_NORM));
        let (mut g, gate) = gate_tape(&v, k, params, l);
        let drop2 = match rng.as_deref_mut() {
            Some(r) if cfg.dropout > 0.0 => {
                let dm = dropout_mask::<T>(g.len(), cfg.dropout, r);
                g.iter_mut().zip(&dm).for_each(|(v, &s)| *v *= s);
                Some(dm)
            }
            _ => None,
        };
        let h_out: Vec<T> = h_mid.iter().zip(&g).map(|(&a, &b)| a + b).collect();
        layers.push(LayerTape {
            h_in: std::mem::replace(&mut h, h_out),
            inv1,
            mamba,
            drop1,
            h_mid,
            inv2,
            gate,
            drop2,
        });
    }

    let denom = c::<T>(k as f64 + cfg.pool_epsilon);
    let mut pooled = vec![T::zero(); d];
    for t in 0..k {
        for j in 0..d {
            pooled[j] += h[t * d + j];
        }
    }
    pooled.iter_mut().for_each(|v| *v = *v / denom);
    let (logits, readout) = readout_tape(&pooled, params);
    SequenceTape {
        k,
        embed,
        layers,
        pooled,
        readout,
        logits,
    }
}

pub(crate) fn row_input<T: Real>(batch: &Batch, row: usize) -> Vec<T> {
    batch
        .row_features(row)
        .iter()
        .map(|&v| c::<T>(v as f64))
        .collect()
}

/// Inference over a batch: only the real (mask-1) tokens of each row are
/// processed, so padding never influences a logit.
pub fn forward<T: Real>(params: &Parameters<T>, batch: &Batch) -> Result<Predictions> {
    batch.validate()?;
    if batch.k_max > params.config.k_max {
        return Err(Error::Dimension(format!(
            "batch k_max {} exceeds model k_max {}",
            batch.k_max, params.config.k_max
        )));
    }
    let heads = params.config.heads;
    let rows: Vec<Vec<f64>> = (0..batch.batch_size)
        .into_par_iter()
        .map(|row| {
            let f = row_input::<T>(batch, row);
            forward_sequence(params, &f, batch.lengths[row], None)
                .logits
                .iter()
                .map(|v| v.to_f64().unwrap())
                .collect()
        })
        .collect();
    Ok(Predictions {
        heads,
        logits: rows.into_iter().flatten().collect(),
    })
}
