//! JSON job files behind the command-line entry points.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    fit_linear, measure_latency, write_report, LatencyReport, LatencyWorkload, LinearFit,
    NeuralDecoder, ReportRow,
};
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::model::{init_params, load_params, save_params_with_meta, ModelConfig};
use crate::noise::NoiseKind;
use crate::training::{
    gradcheck, train_with_progress, write_history_csv, GradcheckReport, HistoryRow, TrainConfig,
};

/// Environment variable overriding the worker-thread count.
pub const WORKERS_ENV: &str = "QEC_SPARSE_WORKERS";

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainJob {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub distance: usize,
    pub noise: NoiseKind,
    /// Receives `best.smdw`, `final.smdw`, optional `ema.smdw` and
    /// `history.csv`.
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: usize,
    pub best_val_ler: Option<f64>,
    pub best_path: PathBuf,
}

pub fn run_train(job: &TrainJob, progress: impl FnMut(&HistoryRow)) -> Result<TrainSummary> {
    let lattice = Lattice::new(job.distance)?;
    let out = train_with_progress(&job.model, &job.train, &lattice, job.noise, progress)?;
    fs::create_dir_all(&job.output_dir)?;
    let meta = serde_json::to_value(&job.train)?;
    let best_path = job.output_dir.join("best.smdw");
    save_params_with_meta(&out.best, Some(&meta), &best_path)?;
    save_params_with_meta(&out.params, Some(&meta), job.output_dir.join("final.smdw"))?;
    if let Some(ema) = &out.ema {
        save_params_with_meta(ema, Some(&meta), job.output_dir.join("ema.smdw"))?;
    }
    write_history_csv(
        fs::File::create(job.output_dir.join("history.csv"))?,
        &out.history,
    )?;
    Ok(TrainSummary {
        steps: out.history.len(),
        best_val_ler: out.best_val_ler,
        best_path,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyJob {
    /// Weights to time; when absent, a model freshly initialized from
    /// `model` is used (cost does not depend on weight values).
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    pub workloads: Vec<LatencyWorkload>,
    pub batch_sizes: Vec<usize>,
    pub repeats: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencySummary {
    pub reports: Vec<LatencyReport>,
    /// Fit of mean time against k for the first batch size, when the
    /// workloads span more than one k.
    pub fit: Option<LinearFit>,
}

pub fn run_latency(job: &LatencyJob) -> Result<LatencySummary> {
    let params = match (&job.checkpoint, &job.model) {
        (Some(path), _) => load_params(path)?,
        (None, Some(cfg)) => init_params(cfg, 0)?,
        (None, None) => return Err(Error::Config("need a checkpoint or a model config".into())),
    };
    let mut reports = Vec::new();
    for w in &job.workloads {
        let lattice = Lattice::new(w.distance)?;
        let dec = NeuralDecoder::new(&lattice, vec![params.clone()])?;
        reports.extend(measure_latency(&dec, w, &job.batch_sizes, job.repeats)?);
    }
    let first = job.batch_sizes.first().copied();
    let (xs, ys): (Vec<f64>, Vec<f64>) = reports
        .iter()
        .filter(|r| Some(r.batch_size) == first)
        .map(|r| (r.mean_k, r.mean_us))
        .unzip();
    let distinct_k = xs.iter().any(|&x| x != xs[0]);
    let fit = (xs.len() >= 2 && distinct_k).then(|| fit_linear(&xs, &ys));
    if let Some(path) = &job.output {
        let rows: Vec<ReportRow> = reports
            .iter()
            .map(|r| ReportRow {
                experiment_id: format!("latency-b{}", r.batch_size),
                d: r.distance,
                rounds: r.rounds,
                p: 0.0,
                decoder: r.decoder.clone(),
                shots: (r.batch_size * r.repeats) as u64,
                failures: None,
                ler: None,
                ci_lo: None,
                ci_hi: None,
                mean_k: r.mean_k,
                time_us_per_shot: Some(r.mean_us),
                truncated_frac: None,
            })
            .collect();
        write_report(&rows, path, job, &reports)?;
    }
    Ok(LatencySummary { reports, fit })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckCase {
    pub model: ModelConfig,
    pub seed: u64,
    pub batch_size: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckJob {
    pub cases: Vec<GradcheckCase>,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_step() -> f64 {
    1e-5
}

fn default_tolerance() -> f64 {
    1e-4
}

pub fn run_gradcheck(job: &GradcheckJob) -> Result<Vec<GradcheckReport>> {
    job.cases
        .iter()
        .map(|c| gradcheck(&c.model, c.seed, c.batch_size, c.k, job.step))
        .collect()
}
