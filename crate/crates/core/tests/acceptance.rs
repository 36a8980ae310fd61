//! Acceptance suite. Every criterion prints one PASS/FAIL line to stderr; the test
//! fails if any criterion fails. Criteria run sequentially inside a single
//! test so the latency measurements are not disturbed by other tests.
//!
//! `ACCEPTANCE_ONLY=2,5` restricts the run to the listed criteria.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qec_sparse::defects::{batch_from_shots, cumulative_xor, pad_and_mask, extract_defects};
use qec_sparse::harness::{
    estimate_ler_with, fit_linear, measure_latency, sparsity_report, LatencyWorkload, MwpmDecoder,
    NeuralDecoder,
};
use qec_sparse::lattice::{CheckKind, Lattice};
use qec_sparse::matching::{build_matching_graph, Defect, MatchingProblem};
use qec_sparse::model::{
    forward, init_params, load_params, mamba_scan, save_params, ModelConfig, Parameters,
    ReadoutKind,
};
use qec_sparse::noise::{detection_events, sample_many, NoiseConfig, NoiseKind};
use qec_sparse::training::{gradcheck, random_batch, train, TrainConfig};

type Outcome = qec_sparse::Result<(bool, String)>;

// ---------------------------------------------------------------------------
// 1. MWPM code-capacity reference table
// ---------------------------------------------------------------------------

fn mwpm_reference_table() -> Outcome {
    let points = [
        (3, 0.01, 1.5e-3),
        (3, 0.03, 1.3e-2),
        (3, 0.05, 3.4e-2),
        (3, 0.10, 1.1e-1),
        (5, 0.05, 1.6e-2),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for (d, p, reference) in points {
        let lattice = Lattice::new(d)?;
        let noise = NoiseConfig::code_capacity(p);
        let dec = MwpmDecoder::new(&lattice, &noise);
        let e = estimate_ler_with(&dec, &lattice, &noise, 1_000_000, 2024)?;
        let rel = (e.ler - reference).abs() / reference;
        let inside = e.ci_lo <= reference && reference <= e.ci_hi;
        let pass = rel <= 0.10 || inside;
        ok &= pass;
        notes.push(format!(
            "d={d} p={p}: {:.3e} [{:.3e}, {:.3e}] vs {reference:.1e} ({:+.1}%){}",
            e.ler,
            e.ci_lo,
            e.ci_hi,
            100.0 * (e.ler - reference) / reference,
            if pass { "" } else { " MISS" }
        ));
    }
    Ok((ok, notes.join("; ")))
}

// ---------------------------------------------------------------------------
// 2. Sparsity accounting
// ---------------------------------------------------------------------------

fn sparsity_accounting() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (d, stabs, dense) in [(3, 8, 960), (5, 24, 2880), (7, 48, 5760)] {
        let lattice = Lattice::new(d)?;
        let noise = NoiseConfig::phenomenological(1e-3, 120);
        let s = sparsity_report(&lattice, &noise, 2000, 7)?;
        let pass = lattice.num_stabilizers() == stabs
            && s.dense_size == dense
            && s.ratio.to_bits() == (s.mean_k / s.dense_size as f64).to_bits();
        ok &= pass;
        notes.push(format!(
            "d={d}: {} stabilizers, dense {}, mean k {:.2}, p99 {}, ratio {:.4}%",
            lattice.num_stabilizers(),
            s.dense_size,
            s.mean_k,
            s.p99_k,
            100.0 * s.ratio
        ));
    }
    Ok((ok, notes.join("; ")))
}

// ---------------------------------------------------------------------------
// 3. Gradient check
// ---------------------------------------------------------------------------

fn tiny(heads: usize, readout: ReadoutKind, layers: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        layers,
        d_state: 4,
        d_conv: 3,
        expand: 2,
        w_gate: 2,
        d_read: 6,
        res_blocks: 2,
        heads,
        readout,
        k_max: 7,
        ..ModelConfig::default()
    }
}

fn gradient_check() -> Outcome {
    let cases = [
        tiny(1, ReadoutKind::Mlp, 1),
        tiny(2, ReadoutKind::Mlp, 2),
        tiny(1, ReadoutKind::Resblock, 2),
        tiny(2, ReadoutKind::Resblock, 1),
    ];
    let mut worst = 0.0f64;
    let mut notes = Vec::new();
    for (i, cfg) in cases.iter().enumerate() {
        let r = gradcheck(cfg, 100 + i as u64, 3, 6, 1e-5)?;
        worst = worst.max(r.max_rel_err);
        notes.push(format!(
            "{}h/{:?}/L{}: {:.2e} over {} params",
            cfg.heads, cfg.readout, cfg.layers, r.max_rel_err, r.checked
        ));
    }
    Ok((worst <= 1e-4, format!("max rel err {worst:.2e}; {}", notes.join("; "))))
}

// ---------------------------------------------------------------------------
// 4. Scan oracle
// ---------------------------------------------------------------------------

/// Straightforward sequential evaluation of one selective state-space block,
/// written directly from the block's definition in f64.
fn scan_oracle(x: &[f64], mask: &[f32], p: &Parameters<f64>) -> Vec<f64> {
    let cfg = &p.config;
    let (d, i, n, kc) = (cfg.d_model, cfg.d_model * cfg.expand, cfg.d_state, cfg.d_conv);
    let w = |name: &str| p.get(&format!("layers.0.{name}")).unwrap().data.clone();
    let (in_proj, conv_w, conv_b) = (w("in_proj"), w("conv_weight"), w("conv_bias"));
    let (dt_w, dt_b, b_w, c_w) = (w("dt_proj"), w("dt_bias"), w("b_proj"), w("c_proj"));
    let (a_log, d_skip, out_proj) = (w("a_log"), w("d_skip"), w("out_proj"));
    let len = mask.len();
    let softplus = |v: f64| if v > 20.0 { v } else { v.exp().ln_1p() };
    let silu = |v: f64| v / (1.0 + (-v).exp());

    let mut xs = vec![vec![0.0; i]; len];
    let mut zs = vec![vec![0.0; i]; len];
    for t in 0..len {
        for r in 0..2 * i {
            let v: f64 = (0..d).map(|c| in_proj[r * d + c] * x[t * d + c]).sum();
            if r < i {
                xs[t][r] = v * mask[t] as f64;
            } else {
                zs[t][r - i] = v;
            }
        }
    }
    let mut state = vec![vec![0.0; n]; i];
    let mut out = vec![0.0; len * d];
    for t in 0..len {
        let mut u = vec![0.0; i];
        for ch in 0..i {
            let mut acc = conv_b[ch];
            for lag in 0..kc {
                if t >= lag {
                    acc += conv_w[ch * kc + kc - 1 - lag] * xs[t - lag][ch];
                }
            }
            u[ch] = silu(acc);
        }
        let bt: Vec<f64> = (0..n).map(|s| (0..i).map(|c| b_w[s * i + c] * u[c]).sum()).collect();
        let ct: Vec<f64> = (0..n).map(|s| (0..i).map(|c| c_w[s * i + c] * u[c]).sum()).collect();
        let mut gated = vec![0.0; i];
        for ch in 0..i {
            let delta = softplus((0..i).map(|c| dt_w[ch * i + c] * u[c]).sum::<f64>() + dt_b[ch]);
            let mut y = d_skip[ch] * u[ch];
            for s in 0..n {
                let a = -a_log[ch * n + s].exp();
                let abar = (delta * a).exp();
                let bbar = (abar - 1.0) / a * bt[s];
                state[ch][s] = abar * state[ch][s] + bbar * u[ch];
                y += ct[s] * state[ch][s];
            }
            gated[ch] = y * silu(zs[t][ch]) * mask[t] as f64;
        }
        for r in 0..d {
            out[t * d + r] = (0..i).map(|c| out_proj[r * i + c] * gated[c]).sum();
        }
    }
    out
}

fn scan_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let len = rng.gen_range(1..=32);
        let cfg = ModelConfig {
            d_model: 2 * rng.gen_range(2..=6),
            layers: 1,
            d_state: rng.gen_range(1..=8),
            d_conv: rng.gen_range(1..=4),
            expand: rng.gen_range(1..=2),
            w_gate: 2,
            heads: 1,
            k_max: 32,
            ..ModelConfig::default()
        };
        let mut params = init_params(&cfg, case)?;
        for t in params.tensors.iter_mut().filter(|t| t.name.starts_with("layers.")) {
            let spread = if t.name.ends_with("dt_bias") { 2.0 } else { 0.3 };
            for v in t.data.iter_mut() {
                *v += rng.gen_range(-spread..spread);
            }
        }
        let x: Vec<f32> = (0..len * cfg.d_model).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mask: Vec<f32> = match case % 3 {
            0 => vec![1.0; len],
            1 => {
                let real = rng.gen_range(1..=len);
                (0..len).map(|t| if t < real { 1.0 } else { 0.0 }).collect()
            }
            _ => (0..len).map(|_| if rng.gen_bool(0.7) { 1.0 } else { 0.0 }).collect(),
        };
        let got = mamba_scan(&x, &params, 0, &mask)?;
        let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let want = scan_oracle(&x64, &mask, &params.cast::<f64>());
        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = got
            .iter()
            .zip(&want)
            .fold(0.0f64, |m, (&g, &w)| m.max((g as f64 - w).abs()));
        worst = worst.max(if scale > 0.0 { err / scale } else { err });
    }
    Ok((worst <= 1e-6, format!("100 cases, max relative error {worst:.2e}")))
}

// ---------------------------------------------------------------------------
// 5. Matching exactness
// ---------------------------------------------------------------------------

/// Enumerates every pairing (defect i resolved first, partners ascending,
/// boundary last) and keeps the first minimum.
fn brute_force(p: &MatchingProblem) -> (f64, u8) {
    fn rec(p: &MatchingProblem, used: &mut [bool], w: f64, par: u8, best: &mut Option<(f64, u8)>) {
        let Some(i) = used.iter().position(|u| !u) else {
            if best.map_or(true, |(bw, _)| w < bw - 1e-9 * bw.abs().max(1.0)) {
                *best = Some((w, par));
            }
            return;
        };
        used[i] = true;
        for j in i + 1..p.k {
            if !used[j] {
                used[j] = true;
                let q = par ^ p.pair_parity[i * p.k + j];
                rec(p, used, w + p.pair_weight[i * p.k + j], q, best);
                used[j] = false;
            }
        }
        let q = par ^ p.boundary_parity[i];
        rec(p, used, w + p.boundary_weight[i], q, best);
        used[i] = false;
    }
    let mut best = None;
    rec(p, &mut vec![false; p.k], 0.0, 0, &mut best);
    best.unwrap_or((0.0, 0))
}

fn matching_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut mismatches = 0;
    let mut notes = Vec::new();
    for d in [3, 5] {
        let lattice = Lattice::new(d)?;
        let mut bad = 0;
        for _ in 0..200 {
            let p = rng.gen_range(0.01..0.12);
            let rounds = rng.gen_range(1..=5);
            let noise = if rng.gen_bool(0.5) {
                NoiseConfig::code_capacity(p)
            } else {
                NoiseConfig::phenomenological(p, rounds)
            };
            let basis = if rng.gen_bool(0.5) { CheckKind::Z } else { CheckKind::X };
            let graph = build_matching_graph(&lattice, &noise, basis);
            let records = noise.records();
            let k = rng.gen_range(0..=8usize.min(graph.len() * records));
            let mut defects: Vec<Defect> = Vec::new();
            while defects.len() < k {
                let c = Defect {
                    node: rng.gen_range(0..graph.len()),
                    round: rng.gen_range(0..records),
                };
                if !defects.contains(&c) {
                    defects.push(c);
                }
            }
            let problem = MatchingProblem::from_defects(&defects, &graph);
            let dp = problem.solve_exact();
            let (w, par) = brute_force(&problem);
            if (dp.weight - w).abs() > 1e-9 * w.abs().max(1.0) || dp.prediction != par {
                bad += 1;
            }
        }
        mismatches += bad;
        notes.push(format!("d={d}: {bad}/200 mismatches"));
    }
    Ok((mismatches == 0, notes.join("; ")))
}

// ---------------------------------------------------------------------------
// 6. Toy training gate
// ---------------------------------------------------------------------------

fn toy_training() -> Outcome {
    let start = Instant::now();
    let lattice = Lattice::new(3)?;
    let model = ModelConfig {
        d_model: 64,
        layers: 2,
        heads: 2,
        k_max: 16,
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        lr: 1e-3,
        lr_floor: 1e-5,
        samples_per_epoch: 200_000,
        epochs: 1,
        batch_size: 64,
        train_p: vec![0.05, 0.08, 0.1],
        weight_decay: 0.0,
        val_p: 0.05,
        val_shots: 20_000,
        val_every: 100,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train(&model, &tc, &lattice, NoiseKind::CodeCapacity)?;
    let train_secs = start.elapsed().as_secs_f64();
    let noise = NoiseConfig::code_capacity(0.05);
    let nn = NeuralDecoder::new(&lattice, vec![out.best])?;
    let mwpm = MwpmDecoder::new(&lattice, &noise);
    let e_nn = estimate_ler_with(&nn, &lattice, &noise, 100_000, 987_654)?;
    let e_mw = estimate_ler_with(&mwpm, &lattice, &noise, 100_000, 987_654)?;
    let ratio = e_nn.ler / e_mw.ler;
    let total = start.elapsed().as_secs_f64();
    Ok((
        ratio <= 1.15 && total <= 1800.0,
        format!(
            "{} samples, SMD {:.4e} vs MWPM {:.4e} (ratio {ratio:.3}); train {train_secs:.0}s, total {total:.0}s",
            tc.samples_per_epoch * tc.epochs,
            e_nn.ler,
            e_mw.ler
        ),
    ))
}

// ---------------------------------------------------------------------------
// 7. Linear-in-k latency
// ---------------------------------------------------------------------------

fn latency_scaling() -> Outcome {
    let cfg = ModelConfig {
        d_model: 64,
        layers: 2,
        heads: 2,
        k_max: 256,
        ..ModelConfig::default()
    };
    let params = init_params(&cfg, 3)?;
    // (d, k) workloads; the first three vary k at d=5, the rest vary d at k=64.
    let points = [(5, 16), (5, 64), (5, 256), (3, 64), (7, 64), (9, 64)];
    let decoders = points
        .iter()
        .map(|&(d, _)| NeuralDecoder::new(&Lattice::new(d)?, vec![params.clone()]))
        .collect::<qec_sparse::Result<Vec<_>>>()?;
    // The host may be shared, so the workloads are interleaved over several
    // rounds and each keeps its fastest repeat.
    let mut best = vec![f64::INFINITY; points.len()];
    for _ in 0..6 {
        for (i, (&(d, k), dec)) in points.iter().zip(&decoders).enumerate() {
            let w = LatencyWorkload {
                distance: d,
                k,
                rounds: None,
                shots: 32,
                seed: 5,
            };
            best[i] = best[i].min(measure_latency(dec, &w, &[8], 3)?[0].min_us);
        }
    }
    let ks = [16.0, 64.0, 256.0];
    let fit = fit_linear(&ks, &best[..3]);
    let by_d = [best[3], best[1], best[4], best[5]];
    let lo = by_d.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = by_d.iter().cloned().fold(0.0, f64::max);
    let spread = (hi - lo) / lo;
    Ok((
        fit.r2 >= 0.95 && spread <= 0.25,
        format!(
            "us/shot at k=16,64,256: {:.1}, {:.1}, {:.1}; R^2 {:.4}; k=64 over d=3..9: {} (spread {:.1}%)",
            best[0],
            best[1],
            best[2],
            fit.r2,
            by_d.iter().map(|t| format!("{t:.1}")).collect::<Vec<_>>().join(", "),
            100.0 * spread
        ),
    ))
}

// ---------------------------------------------------------------------------
// 8. Contract suite
// ---------------------------------------------------------------------------

fn contracts() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, pass: bool| {
        ok &= pass;
        notes.push(format!("{name} {}", if pass { "ok" } else { "FAILED" }));
    };

    // Padding invariance: garbage in padded slots and a wider k_max change
    // nothing.
    let cfg = ModelConfig { k_max: 40, ..ModelConfig::default() };
    let params = init_params(&cfg, 8)?;
    let batch = random_batch(16, 12, 20, 81);
    let mut noisy = batch.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(82);
    for r in 0..noisy.batch_size {
        let start = (r * noisy.k_max + noisy.lengths[r]) * 13;
        let end = (r + 1) * noisy.k_max * 13;
        for v in &mut noisy.features[start..end] {
            *v = rng.gen_range(-50.0..50.0);
        }
    }
    let lattice = Lattice::new(5)?;
    let shots = sample_many(&lattice, &NoiseConfig::phenomenological(0.02, 3), 83, 0, 64)?;
    let seqs = shots
        .iter()
        .map(|s| extract_defects(s, &lattice))
        .collect::<qec_sparse::Result<Vec<_>>>()?;
    let narrow = pad_and_mask(&seqs, 24)?;
    let wide = pad_and_mask(&seqs, 40)?;
    let same = |a: &qec_sparse::model::Predictions, b: &qec_sparse::model::Predictions| {
        a.logits.iter().zip(&b.logits).all(|(x, y)| x.to_bits() == y.to_bits())
    };
    check(
        "padding",
        same(&forward(&params, &batch)?, &forward(&params, &noisy)?)
            && same(&forward(&params, &narrow)?, &forward(&params, &wide)?),
    );

    // Detection events and cumulative XOR invert each other.
    let zeros = vec![0u8; lattice.num_stabilizers()];
    let mut round_trip = true;
    for s in &shots {
        round_trip &= detection_events(&s.measurements, &zeros)? == s.events;
        for c in 0..lattice.num_stabilizers() {
            round_trip &= cumulative_xor(&s.events.series(c))? == s.measurements.series(c);
        }
    }
    check("events/xor", round_trip);

    // Shot streams do not depend on the thread count.
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let noise = NoiseConfig::phenomenological(0.03, 4);
    let a = one.install(|| sample_many(&lattice, &noise, 90, 10, 300))?;
    let b = four.install(|| sample_many(&lattice, &noise, 90, 10, 300))?;
    let c = sample_many(&lattice, &noise, 90, 10, 300)?;
    check("shot seeds", a == b && a == c);

    // Training history is bit-exact across reruns.
    let small = ModelConfig {
        d_model: 16,
        layers: 1,
        d_state: 4,
        heads: 2,
        dropout: 0.1,
        k_max: 16,
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        lr: 1e-3,
        samples_per_epoch: 256,
        epochs: 2,
        batch_size: 32,
        train_p: vec![0.05, 0.1],
        mask_prob: 0.5,
        ema_decay: Some(0.9),
        val_shots: 200,
        val_every: 4,
        ..TrainConfig::default()
    };
    let d3 = Lattice::new(3)?;
    let run = || one.install(|| train(&small, &tc, &d3, NoiseKind::CodeCapacity));
    let (r1, r2) = (run()?, run()?);
    let strip = |h: &[qec_sparse::training::HistoryRow]| {
        h.iter()
            .map(|r| (r.step, r.epoch, r.lr.to_bits(), r.loss.to_bits(), r.val_ler.map(f64::to_bits)))
            .collect::<Vec<_>>()
    };
    check(
        "training history",
        strip(&r1.history) == strip(&r2.history) && r1.params == r2.params && r1.best == r2.best,
    );

    // Weights file: save, load, save again gives identical bytes.
    let dir = tempfile::tempdir()?;
    let (p1, p2) = (dir.path().join("a.smdw"), dir.path().join("b.smdw"));
    save_params(&r1.params, &p1)?;
    let loaded = load_params(&p1)?;
    save_params(&loaded, &p2)?;
    check(
        "weights file",
        loaded == r1.params && std::fs::read(&p1)? == std::fs::read(&p2)?,
    );

    // Extraction from shots through batches agrees with per-sequence padding.
    check("batch assembly", batch_from_shots(&shots, &lattice, 24)? == narrow);

    Ok((ok, notes.join(", ")))
}

#[test]
fn acceptance() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "mwpm code-capacity table", mwpm_reference_table),
        (2, "sparsity accounting", sparsity_accounting),
        (3, "gradient check", gradient_check),
        (4, "scan oracle", scan_oracle_equivalence),
        (5, "matching exactness", matching_exactness),
        (6, "toy training gate", toy_training),
        (7, "linear-in-k latency", latency_scaling),
        (8, "contracts", contracts),
    ];
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = match run() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        // Written to the raw stderr handle so the line shows up even when the
        // test harness captures output.
        let _ = writeln!(
            std::io::stderr(),
            "[{}] {id}. {name} ({:.1}s): {detail}",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        if !pass {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
