use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand};
use plg_core::ce::{ce_learn, CeOptions, TraceSet};
use plg_core::{json, lds_to_plg, seeds, GenConfig, LdsParams, RMode};
use plg_harness::experiment::ExperimentConfig;
use plg_harness::traces::{read_traces, write_traces};
use plg_harness::{run_experiment, HarnessError, Model, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "plg", version, about = "Predictive linear-Gaussian models: simulate, convert, learn, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random LDS and print it as JSON.
    GenSystem {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = RMode::Variance)]
        r_mode: RMode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample traces from an LDS or PLG model file into a trace CSV.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// Observations per trace.
        #[arg(long)]
        len: usize,
        /// Number of traces.
        #[arg(long)]
        traces: usize,
        #[arg(long)]
        seed: u64,
        /// Trace CSV destination. Without it the CSV goes to stdout and the
        /// summary to stderr.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert an LDS JSON into the equivalent PLG JSON.
    Convert {
        #[arg(long)]
        lds: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn PLG parameters from a trace CSV.
    LearnCe {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Diagnostics destination; stderr if omitted.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        /// Floor negative eigenvalues of the learned initial covariance at zero.
        #[arg(long)]
        clip_sigma0: bool,
    },
    /// Per-trace and total log-likelihood of a trace CSV under a model.
    EvalLoglik {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        traces: PathBuf,
    },
    /// Run a consistency sweep described by a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output_dir and $PLG_OUTPUT_DIR.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct SimulateSummary {
    traces: usize,
    len: usize,
    seed: u64,
    total_loglik: f64,
}

#[derive(Serialize)]
struct LoglikOutput {
    per_trace: Vec<f64>,
    total: f64,
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(format!("reading {}", path.display()), e))
}

/// Writes `text` plus a newline to `path`, or to stdout.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, format!("{text}\n"))
            .map_err(|e| HarnessError::io(format!("writing {}", p.display()), e)),
        None => writeln!(io::stdout(), "{text}").map_err(|e| HarnessError::io("writing stdout", e)),
    }
}

fn load_traces(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(|e| HarnessError::io(format!("opening {}", path.display()), e))?;
    read_traces(io::BufReader::new(file))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenSystem { n, seed, r_mode, out } => {
            if n == 0 {
                return Err(HarnessError::usage("--n must be at least 1"));
            }
            let lds = plg_core::random_lds(&GenConfig { n, seed, r_mode })?;
            emit(out.as_deref(), &lds.to_json()?)
        }
        Command::Simulate { model, len, traces, seed, out } => {
            if len == 0 || traces == 0 {
                return Err(HarnessError::usage("--len and --traces must be at least 1"));
            }
            let model = Model::load(&model)?;
            let sampled = (0..traces)
                .map(|k| {
                    let mut rng = seeds::rng(seeds::derive(seed, k as u64));
                    Ok(model.sample(len, &mut rng)?.into_inner())
                })
                .collect::<Result<Vec<_>>>()?;
            let (_, total_loglik) = model.loglik_all(&sampled)?;
            let summary = json::to_string(&SimulateSummary {
                traces,
                len,
                seed,
                total_loglik,
            })?;
            let rows = sampled.iter().map(Vec::as_slice);
            match out {
                Some(p) => {
                    let file = File::create(&p)
                        .map_err(|e| HarnessError::io(format!("creating {}", p.display()), e))?;
                    write_traces(io::BufWriter::new(file), rows)?;
                    emit(None, &summary)
                }
                None => {
                    write_traces(io::stdout().lock(), rows)?;
                    eprintln!("{summary}");
                    Ok(())
                }
            }
        }
        Command::Convert { lds, out } => {
            let lds = LdsParams::from_json(&read_file(&lds)?)
                .map_err(|e| HarnessError::usage(format!("LDS JSON: {e}")))?;
            emit(out.as_deref(), &lds_to_plg(&lds)?.to_json()?)
        }
        Command::LearnCe {
            traces,
            n,
            out,
            diagnostics,
            clip_sigma0,
        } => {
            let ts = TraceSet::new(load_traces(&traces)?, n)?;
            let (params, diag) = ce_learn(&ts, CeOptions { clip_sigma0 })?;
            emit(out.as_deref(), &params.to_json()?)?;
            let diag = diag.to_json()?;
            match diagnostics {
                Some(p) => emit(Some(&p), &diag),
                None => {
                    eprintln!("{diag}");
                    Ok(())
                }
            }
        }
        Command::EvalLoglik { model, traces } => {
            let model = Model::load(&model)?;
            let (per_trace, total) = model.loglik_all(&load_traces(&traces)?)?;
            emit(None, &json::to_string(&LoglikOutput { per_trace, total })?)
        }
        Command::Experiment { config, output_dir } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = cfg.resolve_output_dir(output_dir.as_deref());
            let report = run_experiment(&cfg)?;
            let verdicts = report.write_to(&dir)?;
            eprintln!("wrote {}", dir.display());
            emit(None, &json::to_string(&verdicts)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
