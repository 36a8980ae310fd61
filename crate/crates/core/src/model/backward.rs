//! Reverse-mode adjoint of [`forward_sequence`](super::forward_sequence).

use super::forward::{LayerTape, MambaTape, ReadoutTape, SequenceTape};
use super::ops::{
    c, gelu_grad, layer_norm_backward, linear_backward, rms_norm_backward, sigmoid, silu,
    silu_grad, Real,
};
use super::{
    layer_base, readout_base, slot, Parameters, EMBED_B1, EMBED_B2, EMBED_N1, EMBED_N2,
    EMBED_W1, EMBED_W2,
};

/// Mutable views of two distinct gradient tensors.
fn two<T>(g: &mut [Vec<T>], a: usize, b: usize) -> (&mut [T], &mut [T]) {
    assert!(a < b);
    let (lo, hi) = g.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

fn readout_backward<T: Real>(
    p: &Parameters<T>,
    tape: &ReadoutTape<T>,
    pooled: &[T],
    dlogits: &[T],
    grads: &mut [Vec<T>],
) -> Vec<T> {
    let cfg = &p.config;
    let (d, r) = (cfg.d_model, cfg.d_read);
    let base = readout_base(cfg);
    let mut dpooled = vec![T::zero(); d];
    match tape {
        ReadoutTape::Mlp { pre, act } => {
            for h in 0..cfg.heads {
                let b = base + 4 * h;
                let dz = dlogits[h];
                for (gw, &a) in grads[b + 2].iter_mut().zip(&act[h]) {
                    *gw += dz * a;
                }
                grads[b + 3][0] += dz;
                let w2 = p.data(b + 2);
                let da: Vec<T> = (0..r).map(|j| dz * w2[j] * gelu_grad(pre[h][j])).collect();
                let (dw1, db1) = two(grads, b, b + 1);
                linear_backward(&da, pooled, 1, p.data(b), r, dw1, Some(db1), Some(&mut dpooled));
            }
        }
        ReadoutTape::Resblock {
            r: rs,
            inv,
            nrm,
            a,
            g,
        } => {
            let hb = base + 2 + 5 * cfg.res_blocks;
            let last = &rs[cfg.res_blocks];
            let mut dr = vec![T::zero(); r];
            for h in 0..cfg.heads {
                let dz = dlogits[h];
                let w = p.data(hb + 2 * h);
                for j in 0..r {
                    grads[hb + 2 * h][j] += dz * last[j];
                    dr[j] += dz * w[j];
                }
                grads[hb + 2 * h + 1][0] += dz;
            }
            for blk in (0..cfg.res_blocks).rev() {
                let b = base + 2 + 5 * blk;
                let mut dg = vec![T::zero(); r];
                {
                    let (dw2, db2) = two(grads, b + 3, b + 4);
                    linear_backward(&dr, &g[blk], 1, p.data(b + 3), r, dw2, Some(db2), Some(&mut dg));
                }
                let da: Vec<T> = dg
                    .iter()
                    .zip(&a[blk])
                    .map(|(&g, &a)| g * gelu_grad(a))
                    .collect();
                let mut dn = vec![T::zero(); r];
                {
                    let (dw1, db1) = two(grads, b + 1, b + 2);
                    linear_backward(&da, &nrm[blk], 1, p.data(b + 1), r, dw1, Some(db1), Some(&mut dn));
                }
                let dx = rms_norm_backward(&dn, &rs[blk], &[inv[blk]], r, p.data(b), &mut grads[b]);
                dr.iter_mut().zip(&dx).for_each(|(a, &b)| *a += b);
            }
            let (dw, db) = two(grads, base, base + 1);
            linear_backward(&dr, pooled, 1, p.data(base), r, dw, Some(db), Some(&mut dpooled));
        }
    }
    dpooled
}

fn mamba_backward<T: Real>(
    p: &Parameters<T>,
    layer: usize,
    tape: &MambaTape<T>,
    k: usize,
    dout: &[T],
    grads: &mut [Vec<T>],
) -> Vec<T> {
    let cfg = &p.config;
    let (d, i, n, kc) = (cfg.d_model, cfg.d_inner(), cfg.d_state, cfg.d_conv);
    let base = layer_base(layer);

    let mut dgated = vec![T::zero(); k * i];
    linear_backward(
        dout,
        &tape.gated,
        k,
        p.data(base + slot::OUT_PROJ),
        d,
        &mut grads[base + slot::OUT_PROJ],
        None,
        Some(&mut dgated),
    );
    let mut dy = vec![0.0f64; k * i];
    let mut dxz = vec![T::zero(); k * 2 * i];
    for t in 0..k {
        for ch in 0..i {
            let idx = t * i + ch;
            let g = dgated[idx] * tape.mask[t];
            let z = tape.z[idx];
            dy[idx] = (g * silu(z)).to_f64().unwrap();
            dxz[t * 2 * i + i + ch] = g * tape.y[idx] * silu_grad(z);
        }
    }

    // Scan adjoint, in f64 like the forward recurrence.
    let a: Vec<f64> = p
        .data(base + slot::A_LOG)
        .iter()
        .map(|v| -v.to_f64().unwrap().exp())
        .collect();
    let dskip = p.data(base + slot::D_SKIP);
    let mut ds = vec![0.0f64; i * n];
    let mut du = vec![T::zero(); k * i];
    let mut ddelta = vec![T::zero(); k * i];
    let mut dbm = vec![T::zero(); k * n];
    let mut dcm = vec![T::zero(); k * n];
    let mut dalog = vec![0.0f64; i * n];
    let mut dd = vec![0.0f64; i];
    for t in (0..k).rev() {
        let bt: Vec<f64> = tape.bm[t * n..(t + 1) * n].iter().map(|v| v.to_f64().unwrap()).collect();
        let ct: Vec<f64> = tape.cm[t * n..(t + 1) * n].iter().map(|v| v.to_f64().unwrap()).collect();
        let mut db_t = vec![0.0f64; n];
        let mut dc_t = vec![0.0f64; n];
        for ch in 0..i {
            let idx = t * i + ch;
            let dt = tape.delta[idx].to_f64().unwrap();
            let ut = tape.u[idx].to_f64().unwrap();
            let dyt = dy[idx];
            let mut du_acc = dyt * dskip[ch].to_f64().unwrap();
            dd[ch] += dyt * ut;
            let mut ddt = 0.0;
            let off = idx * n;
            for s in 0..n {
                let ar = a[ch * n + s];
                let da = dt * ar;
                let ab = da.exp();
                let em = da.exp_m1();
                let phi = em / ar;
                let state = tape.states[off + s];
                let prev = if t > 0 { tape.states[off - i * n + s] } else { 0.0 };
                dc_t[s] += dyt * state;
                let g = ds[ch * n + s] + dyt * ct[s];
                let dab = g * prev;
                let dphi = g * bt[s] * ut;
                db_t[s] += g * phi * ut;
                du_acc += g * phi * bt[s];
                ds[ch * n + s] = g * ab;
                ddt += dab * ab * ar + dphi * ab;
                let d_a = dab * ab * dt + dphi * (dt * ab * ar - em) / (ar * ar);
                dalog[ch * n + s] += d_a * ar;
            }
            ddelta[idx] = c(ddt);
            du[idx] = c(du_acc);
        }
        for s in 0..n {
            dbm[t * n + s] = c(db_t[s]);
            dcm[t * n + s] = c(dc_t[s]);
        }
    }
    for (g, v) in grads[base + slot::A_LOG].iter_mut().zip(&dalog) {
        *g += c::<T>(*v);
    }
    for (g, v) in grads[base + slot::D_SKIP].iter_mut().zip(&dd) {
        *g += c::<T>(*v);
    }

    let ddt_pre: Vec<T> = ddelta
        .iter()
        .zip(&tape.dt_pre)
        .map(|(&g, &x)| g * sigmoid(x))
        .collect();
    {
        let (dw, db) = two(grads, base + slot::DT_W, base + slot::DT_B);
        linear_backward(&ddt_pre, &tape.u, k, p.data(base + slot::DT_W), i, dw, Some(db), Some(&mut du));
    }
    linear_backward(
        &dbm,
        &tape.u,
        k,
        p.data(base + slot::B_W),
        n,
        &mut grads[base + slot::B_W],
        None,
        Some(&mut du),
    );
    linear_backward(
        &dcm,
        &tape.u,
        k,
        p.data(base + slot::C_W),
        n,
        &mut grads[base + slot::C_W],
        None,
        Some(&mut du),
    );

    let dxc: Vec<T> = du
        .iter()
        .zip(&tape.xc)
        .map(|(&g, &x)| g * silu_grad(x))
        .collect();
    let cw = p.data(base + slot::CONV_W);
    let mut dxb = vec![T::zero(); k * i];
    {
        let (dcw, dcb) = two(grads, base + slot::CONV_W, base + slot::CONV_B);
        for t in 0..k {
            for ch in 0..i {
                let g = dxc[t * i + ch];
                dcb[ch] += g;
                for j in 0..kc {
                    let src = t as isize - (kc - 1 - j) as isize;
                    if src >= 0 {
                        let si = src as usize * i + ch;
                        dcw[ch * kc + j] += g * tape.xb[si];
                        dxb[si] += g * cw[ch * kc + j];
                    }
                }
            }
        }
    }
    for t in 0..k {
        for ch in 0..i {
            dxz[t * 2 * i + ch] = dxb[t * i + ch] * tape.mask[t];
        }
    }
    let mut dx = vec![T::zero(); k * d];
    linear_backward(
        &dxz,
        &tape.x,
        k,
        p.data(base + slot::IN_PROJ),
        2 * i,
        &mut grads[base + slot::IN_PROJ],
        None,
        Some(&mut dx),
    );
    dx
}

fn layer_backward<T: Real>(
    p: &Parameters<T>,
    layer: usize,
    tape: &LayerTape<T>,
    k: usize,
    dh: Vec<T>,
    grads: &mut [Vec<T>],
) -> Vec<T> {
    let cfg = &p.config;
    let (d, g) = (cfg.d_model, cfg.gate_width());
    let base = layer_base(layer);

    let mut dgo = dh.clone();
    if let Some(m) = &tape.drop2 {
        dgo.iter_mut().zip(m).for_each(|(v, &s)| *v *= s);
    }
    let gt = &tape.gate;
    let mut dq = vec![T::zero(); k * g];
    linear_backward(&dgo, &gt.q, k, p.data(base + slot::W_C), d, &mut grads[base + slot::W_C], None, Some(&mut dq));
    let mut da = vec![T::zero(); k * g];
    let mut db = vec![T::zero(); k * g];
    for j in 0..k * g {
        da[j] = dq[j] * gt.b[j] * silu_grad(gt.a[j]);
        db[j] = dq[j] * silu(gt.a[j]);
    }
    let mut dv = vec![T::zero(); k * d];
    linear_backward(&da, &gt.v, k, p.data(base + slot::W_A), g, &mut grads[base + slot::W_A], None, Some(&mut dv));
    linear_backward(&db, &gt.v, k, p.data(base + slot::W_B), g, &mut grads[base + slot::W_B], None, Some(&mut dv));
    let dn = rms_norm_backward(
        &dv,
        &tape.h_mid,
        &tape.inv2,
        d,
        p.data(base + slot::GATE_NORM),
        &mut grads[base + slot::GATE_NORM],
    );
    let mut dmid = dh;
    dmid.iter_mut().zip(&dn).for_each(|(a, &b)| *a += b);

    let mut dm = dmid.clone();
    if let Some(m) = &tape.drop1 {
        dm.iter_mut().zip(m).for_each(|(v, &s)| *v *= s);
    }
    let du0 = mamba_backward(p, layer, &tape.mamba, k, &dm, grads);
    let dn = rms_norm_backward(
        &du0,
        &tape.h_in,
        &tape.inv1,
        d,
        p.data(base + slot::MIXER_NORM),
        &mut grads[base + slot::MIXER_NORM],
    );
    dmid.iter_mut().zip(&dn).for_each(|(a, &b)| *a += b);
    dmid
}

/// Accumulates `∂(Σ_h dlogits[h]·z_h)/∂θ` into `grads` (one buffer per tensor).
pub(crate) fn backward_sequence<T: Real>(
    p: &Parameters<T>,
    tape: &SequenceTape<T>,
    dlogits: &[T],
    grads: &mut [Vec<T>],
) {
    let cfg = &p.config;
    let (d, k) = (cfg.d_model, tape.k);
    let dpooled = readout_backward(p, &tape.readout, &tape.pooled, dlogits, grads);
    if k == 0 {
        return;
    }
    let denom = c::<T>(k as f64 + cfg.pool_epsilon);
    let mut dh = vec![T::zero(); k * d];
    for t in 0..k {
        for j in 0..d {
            dh[t * d + j] = dpooled[j] / denom;
        }
    }
    for l in (0..cfg.layers).rev() {
        dh = layer_backward(p, l, &tape.layers[l], k, dh, grads);
    }

    let e = &tape.embed;
    let da2 = layer_norm_backward(&dh, &e.xhat2, &e.is2, d, p.data(EMBED_N2), &mut grads[EMBED_N2]);
    let mut dg = vec![T::zero(); k * d];
    {
        let (dw2, db2) = two(grads, EMBED_W2, EMBED_B2);
        linear_backward(&da2, &e.g, k, p.data(EMBED_W2), d, dw2, Some(db2), Some(&mut dg));
    }
    let dn1: Vec<T> = dg.iter().zip(&e.n1).map(|(&g, &x)| g * gelu_grad(x)).collect();
    let da1 = layer_norm_backward(&dn1, &e.xhat1, &e.is1, d, p.data(EMBED_N1), &mut grads[EMBED_N1]);
    let (dw1, db1) = two(grads, EMBED_W1, EMBED_B1);
    linear_backward(&da1, &e.f, k, p.data(EMBED_W1), d, dw1, Some(db1), None);
}
