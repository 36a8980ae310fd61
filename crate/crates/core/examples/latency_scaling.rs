//! Single-threaded forward latency against the number of defects, and at a
//! fixed defect count across distances.

use qec_sparse::harness::{fit_linear, measure_latency, LatencyWorkload, NeuralDecoder};
use qec_sparse::lattice::Lattice;
use qec_sparse::model::{init_params, ModelConfig};

fn time(params: &qec_sparse::model::Parameters, d: usize, k: usize) -> qec_sparse::Result<f64> {
    let dec = NeuralDecoder::new(&Lattice::new(d)?, vec![params.clone()])?;
    let w = LatencyWorkload {
        distance: d,
        k,
        rounds: None,
        shots: 32,
        seed: 1,
    };
    Ok(measure_latency(&dec, &w, &[8], 10)?[0].min_us)
}

fn main() -> qec_sparse::Result<()> {
    let cfg = ModelConfig {
        k_max: 256,
        ..ModelConfig::default()
    };
    let params = init_params(&cfg, 0)?;
    let ks = [16.0, 32.0, 64.0, 128.0, 256.0];
    let mut ts = Vec::new();
    for &k in &ks {
        let t = time(&params, 5, k as usize)?;
        println!("d=5 k={k:>3}: {t:>9.1} us/shot");
        ts.push(t);
    }
    let fit = fit_linear(&ks, &ts);
    println!("fit: {:.2} us/token + {:.1} us, R² {:.4}", fit.slope, fit.intercept, fit.r2);
    for d in [3, 5, 7, 9, 11] {
        println!("k=64 d={d:>2}: {:>9.1} us/shot", time(&params, d, 64)?);
    }
    Ok(())
}
