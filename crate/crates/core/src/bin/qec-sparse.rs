use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use qec_sparse::defects::{batch_from_shots, default_k_max, save_batch};
use qec_sparse::harness::jobs::{
    read_json, run_gradcheck, run_latency, run_train, GradcheckJob, LatencyJob, TrainJob,
    WORKERS_ENV,
};
use qec_sparse::harness::{estimate_ler, sparsity_report, ExperimentSpec};
use qec_sparse::lattice::Lattice;
use qec_sparse::noise::{load_shots, sample_many, save_shots, NoiseConfig};
use qec_sparse::Result;

#[derive(Parser)]
#[command(name = "qec-sparse", version, about = "Sparse surface-code decoding toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Noise {
    CodeCapacity,
    Phenomenological,
}

impl Noise {
    fn config(self, p: f64, rounds: usize) -> NoiseConfig {
        match self {
            Noise::CodeCapacity => NoiseConfig::code_capacity(p),
            Noise::Phenomenological => NoiseConfig::phenomenological(p, rounds),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print stabilizers, coordinates, neighbors and boundary hops.
    LatticeDump {
        #[arg(long)]
        d: usize,
    },
    /// Sample shots into an archive.
    Sample {
        #[arg(long)]
        d: usize,
        #[arg(long, value_enum)]
        noise: Noise,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract defect tokens from a shot archive into a padded batch file.
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
        /// Defaults to ceil(1.5 × p99 of k).
        #[arg(long)]
        kmax: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a job file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Estimate logical error rates for an experiment spec.
    Eval {
        #[arg(long)]
        config: PathBuf,
    },
    /// Time the neural decoder on fixed-k workloads.
    BenchLatency {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare reverse-mode gradients with finite differences.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Defect-count statistics.
    Sparsity {
        #[arg(long)]
        d: usize,
        #[arg(long, value_enum)]
        noise: Noise,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::LatticeDump { d } => print!("{}", Lattice::new(d)?.dump()),
        Command::Sample {
            d,
            noise,
            p,
            rounds,
            n,
            seed,
            out,
        } => {
            let lattice = Lattice::new(d)?;
            let cfg = noise.config(p, rounds);
            cfg.validate()?;
            let shots = sample_many(&lattice, &cfg, seed, 0, n)?;
            save_shots(&out, &shots)?;
            println!("wrote {n} shots to {}", out.display());
        }
        Command::Extract { input, kmax, out } => {
            let shots = load_shots(&input)?;
            let Some(first) = shots.first() else {
                return Err(qec_sparse::Error::Domain("archive holds no shots".into()));
            };
            let lattice = Lattice::new(first.distance)?;
            let k_max = kmax.unwrap_or_else(|| {
                let counts: Vec<usize> = shots.iter().map(|s| s.events.count_ones()).collect();
                default_k_max(&counts)
            });
            let batch = batch_from_shots(&shots, &lattice, k_max)?;
            save_batch(&out, &batch)?;
            let truncated = batch.truncated.iter().filter(|&&t| t).count();
            println!(
                "wrote {} rows (k_max {k_max}, {truncated} truncated) to {}",
                batch.batch_size,
                out.display()
            );
        }
        Command::Train { config } => {
            let job: TrainJob = read_json(&config)?;
            let summary = run_train(&job, |r| {
                if let Some(v) = r.val_ler {
                    eprintln!(
                        "step {:>6}  epoch {:>3}  lr {:.2e}  loss {:.4}  val_ler {:.4}  {:.0}s",
                        r.step, r.epoch, r.lr, r.loss, v, r.wallclock
                    );
                }
            })?;
            println!(
                "{} steps, best val LER {}, saved {}",
                summary.steps,
                summary.best_val_ler.map_or("-".into(), |v| format!("{v:.5}")),
                summary.best_path.display()
            );
        }
        Command::Eval { config } => {
            let spec: ExperimentSpec = read_json(&config)?;
            println!("d\tR\tp\tdecoder\tN\tfailures\tler\tci_lo\tci_hi");
            for e in estimate_ler(&spec)? {
                println!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{:.4e}\t{:.4e}\t{:.4e}",
                    e.distance,
                    e.noise.noisy_rounds(),
                    e.noise.p,
                    e.decoder,
                    e.shots,
                    e.failures,
                    e.ler,
                    e.ci_lo,
                    e.ci_hi
                );
            }
        }
        Command::BenchLatency { config } => {
            let job: LatencyJob = read_json(&config)?;
            let summary = run_latency(&job)?;
            println!("d\tR\tk\tbatch\tmean_us\tmin_us\tp50_us\tp99_us");
            for r in &summary.reports {
                println!(
                    "{}\t{}\t{}\t{}\t{:.1}\t{:.1}\t{:.1}\t{:.1}",
                    r.distance, r.rounds, r.mean_k, r.batch_size, r.mean_us, r.min_us, r.p50_us, r.p99_us
                );
            }
            if let Some(f) = summary.fit {
                println!("linear fit: {:.3} us/token + {:.1} us, R^2 = {:.4}", f.slope, f.intercept, f.r2);
            }
        }
        Command::Gradcheck { config } => {
            let job: GradcheckJob = read_json(&config)?;
            let mut ok = true;
            for (i, r) in run_gradcheck(&job)?.iter().enumerate() {
                let pass = r.max_rel_err <= job.tolerance;
                ok &= pass;
                println!(
                    "case {i}: {} params, max rel err {:.3e} at {}[{}] ({})",
                    r.parameters,
                    r.max_rel_err,
                    r.worst_tensor,
                    r.worst_index,
                    if pass { "ok" } else { "FAIL" }
                );
            }
            return Ok(ok);
        }
        Command::Sparsity {
            d,
            noise,
            p,
            rounds,
            n,
            seed,
        } => {
            let lattice = Lattice::new(d)?;
            let s = sparsity_report(&lattice, &noise.config(p, rounds), n, seed)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not set {WORKERS_ENV}: {e}");
        }
    }
    match run(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
