use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::LerEstimate;
use crate::error::{Error, Result};
use crate::noise::NoiseKind;

pub const REPORT_COLUMNS: [&str; 13] = [
    "experiment_id",
    "d",
    "R",
    "p",
    "decoder",
    "N",
    "failures",
    "ler",
    "ci_lo",
    "ci_hi",
    "mean_k",
    "time_us_per_shot",
    "truncated_frac",
];

/// One CSV row. `time_us_per_shot` is filled by latency benchmarks only, so
/// LER reports stay byte-identical across reruns; measured decode times of
/// LER runs go to the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment_id: String,
    pub d: usize,
    #[serde(rename = "R")]
    pub rounds: usize,
    pub p: f64,
    pub decoder: String,
    #[serde(rename = "N")]
    pub shots: u64,
    pub failures: Option<u64>,
    pub ler: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub mean_k: f64,
    pub time_us_per_shot: Option<f64>,
    pub truncated_frac: Option<f64>,
}

impl ReportRow {
    pub fn from_estimate(id: &str, e: &LerEstimate) -> Self {
        Self {
            experiment_id: id.to_string(),
            d: e.distance,
            rounds: match e.noise.kind {
                NoiseKind::CodeCapacity => 1,
                NoiseKind::Phenomenological => e.noise.rounds,
            },
            p: e.noise.p,
            decoder: e.decoder.clone(),
            shots: e.shots,
            failures: Some(e.failures),
            ler: Some(e.ler),
            ci_lo: Some(e.ci_lo),
            ci_hi: Some(e.ci_hi),
            mean_k: e.mean_k,
            time_us_per_shot: None,
            truncated_frac: Some(e.truncated_frac),
        }
    }

    fn csv_line(&self) -> String {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map(|x| x.to_string()).unwrap_or_default()
        }
        [
            self.experiment_id.clone(),
            self.d.to_string(),
            self.rounds.to_string(),
            self.p.to_string(),
            self.decoder.clone(),
            self.shots.to_string(),
            opt(&self.failures),
            opt(&self.ler),
            opt(&self.ci_lo),
            opt(&self.ci_hi),
            self.mean_k.to_string(),
            opt(&self.time_us_per_shot),
            opt(&self.truncated_frac),
        ]
        .join(",")
    }
}

pub fn write_csv<W: Write>(mut w: W, rows: &[ReportRow]) -> Result<()> {
    writeln!(w, "{}", REPORT_COLUMNS.join(","))?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

fn git_revision() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

/// Writes the CSV at `path` and a JSON sidecar (`<path>.json`) holding the
/// spec, the full results, version stamps and the timestamp.
pub fn write_report(
    rows: &[ReportRow],
    path: impl AsRef<Path>,
    spec: &impl Serialize,
    details: &impl Serialize,
) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Config("no results to report".into()));
    }
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    fs::write(path, buf)?;
    let sidecar = serde_json::json!({
        "spec": spec,
        "results": details,
        "version": env!("CARGO_PKG_VERSION"),
        "git": git_revision(),
        "timestamp": SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    });
    let mut side = path.as_os_str().to_owned();
    side.push(".json");
    fs::write(side, serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// Parses a CSV written by [`write_csv`].
pub fn read_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_COLUMNS.join(",").as_str()) {
        return Err(Error::Format("unexpected report header".into()));
    }
    fn opt<T: std::str::FromStr>(s: &str) -> Result<Option<T>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::Format(format!("bad field {s:?}")))
        }
    }
    fn req<T: std::str::FromStr>(s: &str) -> Result<T> {
        s.parse().map_err(|_| Error::Format(format!("bad field {s:?}")))
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != REPORT_COLUMNS.len() {
                return Err(Error::Format(format!("expected 13 fields: {line}")));
            }
            Ok(ReportRow {
                experiment_id: f[0].to_string(),
                d: req(f[1])?,
                rounds: req(f[2])?,
                p: req(f[3])?,
                decoder: f[4].to_string(),
                shots: req(f[5])?,
                failures: opt(f[6])?,
                ler: opt(f[7])?,
                ci_lo: opt(f[8])?,
                ci_hi: opt(f[9])?,
                mean_k: req(f[10])?,
                time_us_per_shot: opt(f[11])?,
                truncated_frac: opt(f[12])?,
            })
        })
        .collect()
}
