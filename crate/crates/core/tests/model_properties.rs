use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qec_sparse::defects::{Batch, NUM_FEATURES};
use qec_sparse::harness::ensemble_predict;
use qec_sparse::model::{embed, forward, gated_dense, init_params, mamba_scan, ModelConfig, Parameters};
use qec_sparse::training::random_batch;

fn small() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        layers: 2,
        d_state: 4,
        d_conv: 3,
        w_gate: 2,
        d_read: 8,
        k_max: 12,
        ..ModelConfig::default()
    }
}

fn perturbed(cfg: &ModelConfig, seed: u64) -> Parameters<f64> {
    let mut p = init_params(cfg, seed).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in p.tensors.iter_mut() {
        for v in t.data.iter_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    p
}

fn tensor<'a>(p: &'a Parameters<f64>, name: &str) -> &'a [f64] {
    &p.get(name).unwrap().data
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

fn matvec(w: &[f64], x: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let n = x.len();
    (0..w.len() / n)
        .map(|r| (0..n).map(|c| w[r * n + c] * x[c]).sum::<f64>() + bias.map_or(0.0, |b| b[r]))
        .collect()
}

fn layer_norm(x: &[f64], g: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter().zip(g).map(|(v, g)| (v - mean) / (var + 1e-5).sqrt() * g).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[test]
fn embed_zero_token_is_position_independent() {
    let p = perturbed(&small(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut f: Vec<f64> = (0..5 * NUM_FEATURES).map(|_| rng.gen()).collect();
    f[..NUM_FEATURES].fill(0.0);
    f[3 * NUM_FEATURES..4 * NUM_FEATURES].fill(0.0);
    let h = embed(&f, &p).unwrap();
    let d = p.config.d_model;
    assert_eq!(h[..d], h[3 * d..4 * d]);
}

#[test]
fn embed_commutes_with_token_permutation() {
    let p = perturbed(&small(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f: Vec<f64> = (0..4 * NUM_FEATURES).map(|_| rng.gen()).collect();
    let order = [2, 0, 3, 1];
    let g: Vec<f64> = order
        .iter()
        .flat_map(|&i| f[i * NUM_FEATURES..(i + 1) * NUM_FEATURES].to_vec())
        .collect();
    let (hf, hg) = (embed(&f, &p).unwrap(), embed(&g, &p).unwrap());
    let d = p.config.d_model;
    for (pos, &i) in order.iter().enumerate() {
        assert_eq!(hg[pos * d..(pos + 1) * d], hf[i * d..(i + 1) * d]);
    }
}

#[test]
fn embed_matches_straight_line_evaluation() {
    let p = perturbed(&small(), 5);
    let f: Vec<f64> = (0..NUM_FEATURES).map(|i| 0.1 * i as f64 - 0.4).collect();
    let a = layer_norm(
        &matvec(tensor(&p, "embed.w1"), &f, Some(tensor(&p, "embed.b1"))),
        tensor(&p, "embed.norm1"),
    );
    let g: Vec<f64> = a.iter().map(|&v| gelu(v)).collect();
    let want = layer_norm(
        &matvec(tensor(&p, "embed.w2"), &g, Some(tensor(&p, "embed.b2"))),
        tensor(&p, "embed.norm2"),
    );
    assert!(close(&embed(&f, &p).unwrap(), &want, 1e-12));
    assert!(embed(&f[..5], &p).is_err());
}

#[test]
fn gated_dense_zero_cases_and_oracle() {
    let p = perturbed(&small(), 6);
    let d = p.config.d_model;
    assert!(gated_dense(&vec![0.0; 3 * d], &p, 0).unwrap().iter().all(|&v| v == 0.0));

    let mut q = p.clone();
    q.get_mut("layers.1.w_b").unwrap().data.fill(0.0);
    let x: Vec<f64> = (0..2 * d).map(|i| (i as f64).sin()).collect();
    assert!(gated_dense(&x, &q, 1).unwrap().iter().all(|&v| v == 0.0));

    let row = &x[..d];
    let a = matvec(tensor(&p, "layers.0.w_a"), row, None);
    let b = matvec(tensor(&p, "layers.0.w_b"), row, None);
    let h: Vec<f64> = a.iter().zip(&b).map(|(&a, &b)| silu(a) * b).collect();
    let want = matvec(tensor(&p, "layers.0.w_c"), &h, None);
    assert!(close(&gated_dense(row, &p, 0).unwrap(), &want, 1e-12));
    assert!(gated_dense(row, &p, 2).is_err());
}

#[test]
fn scan_single_step_closed_form() {
    // Length one: the state starts at zero, so y = C·B̄·u + D·u.
    let cfg = small();
    let p = perturbed(&cfg, 7);
    let (d, i, n, kc) = (cfg.d_model, cfg.d_inner(), cfg.d_state, cfg.d_conv);
    let x: Vec<f64> = (0..d).map(|j| 0.3 * j as f64 - 1.0).collect();
    let xz = matvec(tensor(&p, "layers.0.in_proj"), &x, None);
    let conv_w = tensor(&p, "layers.0.conv_weight");
    let u: Vec<f64> = (0..i)
        .map(|ch| silu(conv_w[ch * kc + kc - 1] * xz[ch] + tensor(&p, "layers.0.conv_bias")[ch]))
        .collect();
    let dt = matvec(tensor(&p, "layers.0.dt_proj"), &u, Some(tensor(&p, "layers.0.dt_bias")));
    let bv = matvec(tensor(&p, "layers.0.b_proj"), &u, None);
    let cv = matvec(tensor(&p, "layers.0.c_proj"), &u, None);
    let a_log = tensor(&p, "layers.0.a_log");
    let gated: Vec<f64> = (0..i)
        .map(|ch| {
            let delta = dt[ch].exp().ln_1p();
            let mut y = tensor(&p, "layers.0.d_skip")[ch] * u[ch];
            for s in 0..n {
                let a = -a_log[ch * n + s].exp();
                y += cv[s] * ((delta * a).exp_m1() / a) * bv[s] * u[ch];
            }
            y * silu(xz[i + ch])
        })
        .collect();
    let want = matvec(tensor(&p, "layers.0.out_proj"), &gated, None);
    assert!(close(&mamba_scan(&x, &p, 0, &[1.0]).unwrap(), &want, 1e-12));
}

#[test]
fn scan_vanishing_step_reduces_to_skip_path() {
    // With Δ → 0 the state never moves and only D·u survives.
    let cfg = small();
    let mut p = perturbed(&cfg, 8);
    p.get_mut("layers.0.dt_bias").unwrap().data.fill(-60.0);
    p.get_mut("layers.0.dt_proj").unwrap().data.fill(0.0);
    let mut q = p.clone();
    q.get_mut("layers.0.c_proj").unwrap().data.fill(0.0);
    let x: Vec<f64> = (0..5 * cfg.d_model).map(|j| (j as f64 * 0.7).cos()).collect();
    let mask = [1.0; 5];
    assert!(close(
        &mamba_scan(&x, &p, 0, &mask).unwrap(),
        &mamba_scan(&x, &q, 0, &mask).unwrap(),
        1e-12
    ));
}

#[test]
fn scan_masked_positions_are_zero_and_do_not_leak() {
    let cfg = small();
    let p = perturbed(&cfg, 9);
    let d = cfg.d_model;
    let mut x: Vec<f64> = (0..6 * d).map(|j| (j as f64 * 0.3).sin()).collect();
    let mask = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0];
    let a = mamba_scan(&x, &p, 0, &mask).unwrap();
    assert!(a[4 * d..].iter().all(|&v| v == 0.0));
    for v in &mut x[4 * d..] {
        *v = 100.0;
    }
    let b = mamba_scan(&x, &p, 0, &mask).unwrap();
    assert_eq!(a, b);
    let prefix = mamba_scan(&x[..4 * d], &p, 0, &mask[..4]).unwrap();
    assert_eq!(a[..4 * d], prefix[..]);
    assert!(mamba_scan(&x, &p, 0, &[1.0; 13]).is_err());
}

fn empty_rows(batch: &mut Batch, rows: &[usize]) {
    for &r in rows {
        let k_max = batch.k_max;
        batch.features[r * k_max * NUM_FEATURES..(r + 1) * k_max * NUM_FEATURES].fill(0.0);
        batch.mask[r * k_max..(r + 1) * k_max].fill(0.0);
        batch.lengths[r] = 0;
        batch.k[r] = 0;
    }
}

#[test]
fn empty_rows_share_one_constant_logit() {
    let cfg = small();
    let p = init_params(&cfg, 10).unwrap();
    let mut batch = random_batch(6, 8, cfg.k_max, 11);
    empty_rows(&mut batch, &[1, 4]);
    let pr = forward(&p, &batch).unwrap();
    for h in 0..cfg.heads {
        assert_eq!(pr.logit(1, h), pr.logit(4, h));
    }
}

#[test]
fn zero_logit_predicts_no_flip() {
    let cfg = ModelConfig { heads: 1, ..small() };
    let mut p = init_params(&cfg, 12).unwrap();
    for t in p.tensors.iter_mut().filter(|t| t.name.starts_with("readout.")) {
        t.data.fill(0.0);
    }
    let pr = forward(&p, &random_batch(3, 5, cfg.k_max, 13)).unwrap();
    assert!((0..3).all(|r| pr.logit(r, 0) == 0.0 && pr.predicted(r, 0) == 0));
}

#[test]
fn ensembles_average_logits() {
    let cfg = small();
    let a = init_params(&cfg, 20).unwrap();
    let batch = random_batch(5, 9, cfg.k_max, 21);
    let single = forward(&a, &batch).unwrap();
    assert_eq!(ensemble_predict(&[a.clone()], &batch).unwrap(), single);

    let dup = ensemble_predict(&[a.clone(), a.clone()], &batch).unwrap();
    assert!(close(&dup.logits, &single.logits, 1e-12));

    // Negating the final layer flips the logit, so the pair averages to zero.
    let mut neg = a.clone();
    for h in 0..cfg.heads {
        for name in [format!("readout.{h}.w2"), format!("readout.{h}.b2")] {
            neg.get_mut(&name).unwrap().data.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let pair = ensemble_predict(&[a.clone(), neg], &batch).unwrap();
    assert!(pair.logits.iter().all(|v| v.abs() < 1e-6));

    let one_head = init_params(&ModelConfig { heads: 1, ..cfg.clone() }, 22).unwrap();
    let err = ensemble_predict(&[a, one_head], &batch).unwrap_err().to_string();
    assert!(err.contains("checkpoint 1"), "{err}");
}

#[test]
fn random_inputs_give_finite_probabilities() {
    let cfg = small();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for trial in 0..200 {
        let p = init_params(&cfg, trial).unwrap();
        let mut batch = random_batch(4, cfg.k_max, cfg.k_max, trial + 1000);
        for v in batch.features.iter_mut() {
            *v *= rng.gen_range(-5.0..5.0);
        }
        let pr = forward(&p, &batch).unwrap();
        for r in 0..pr.rows() {
            for h in 0..cfg.heads {
                let q = pr.probability(r, h);
                assert!(pr.logit(r, h).is_finite() && (0.0..=1.0).contains(&q));
            }
        }
    }
}

#[test]
fn oversized_batches_are_rejected() {
    let cfg = small();
    let p = init_params(&cfg, 40).unwrap();
    assert!(forward(&p, &random_batch(2, 4, cfg.k_max + 1, 41)).is_err());
}
