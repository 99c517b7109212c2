//! The consistency sweep: for each system seed, generate an LDS, convert it
//! to its PLG, sample a corpus, and learn from growing prefixes of it.
//!
//! All randomness flows from the system seeds. Trace `k` of system `s` is
//! drawn from its own stream, so the corpus does not depend on how the work
//! is split across threads.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plg_core::ce::{ce_learn, CeDiagnostics, CeOptions, TraceSet};
use plg_core::json::{self, format_f64};
use plg_core::{lds_to_plg, seeds, GenConfig, LdsParams, PlgParams, RMode};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::metrics::{param_l1_error, perturb_params, summarize};

/// Env var naming the output directory when neither the flag nor the config
/// sets one.
pub const OUTPUT_DIR_ENV: &str = "PLG_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "plg-output";

const TRACE_STREAM: u64 = 1;
const PERTURB_STREAM: u64 = 2;
const PERTURB_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceSource {
    /// Sample from the converted PLG.
    #[default]
    Plg,
    /// Sample from the generating LDS.
    Lds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    /// Defaults to `10 n`.
    #[serde(default)]
    pub trace_len: Option<usize>,
    pub k_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub r_mode: RMode,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub trace_source: TraceSource,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| HarnessError::usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn trace_len(&self) -> usize {
        self.trace_len.unwrap_or(10 * self.n)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::usage(format!("config: {m}")));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.trace_len() < 2 * self.n {
            return bad(format!("trace_len {} is below 2n = {}", self.trace_len(), 2 * self.n));
        }
        if self.k_grid.is_empty() {
            return bad("k_grid is empty".into());
        }
        if self.k_grid[0] < 2 {
            return bad("every K must be at least 2".into());
        }
        if self.k_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("k_grid must be strictly ascending".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds is empty".into());
        }
        Ok(())
    }

    /// Flag, then config, then [`OUTPUT_DIR_ENV`], then [`DEFAULT_OUTPUT_DIR`].
    pub fn resolve_output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

/// One `(seed, K)` cell. Failed cells carry NaN metrics and a reason.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub seed: u64,
    pub k: usize,
    /// `(l_t − l_a) / K`.
    pub loglik_error: f64,
    pub l1_param_error: f64,
    /// `|l_p − l_a| / K` for the truth shifted by `±l1_param_error` in every
    /// parameter: the log-likelihood gap an estimate at the same L1 distance
    /// would show.
    pub perturbed_loglik_error: f64,
    pub diagnostics: Option<CeDiagnostics>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// Ordered by seed (config order) then K.
    pub cells: Vec<Cell>,
}

/// The true system of one seed and its trace corpus.
pub struct SeedData {
    pub lds: LdsParams,
    pub truth: PlgParams,
    pub corpus: TraceSet,
}

/// Generates the system for `seed`, converts it, and samples `k` traces.
pub fn seed_data(cfg: &ExperimentConfig, seed: u64, k: usize) -> plg_core::Result<SeedData> {
    let lds = plg_core::random_lds(&GenConfig {
        n: cfg.n,
        seed,
        r_mode: cfg.r_mode,
    })?;
    let truth = lds_to_plg(&lds)?;
    let len = cfg.trace_len();
    let trace_seed = seeds::derive(seed, TRACE_STREAM);
    let traces = (0..k)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds::rng(seeds::derive(trace_seed, i as u64));
            let tr = match cfg.trace_source {
                TraceSource::Plg => truth.sample(len, &mut rng)?,
                TraceSource::Lds => lds.sample(len, &mut rng)?,
            };
            Ok(tr.into_inner())
        })
        .collect::<plg_core::Result<Vec<_>>>()?;
    let corpus = TraceSet::new(traces, cfg.n)?;
    Ok(SeedData { lds, truth, corpus })
}

fn failed_cell(seed: u64, k: usize, diagnostics: Option<CeDiagnostics>, reason: String) -> Cell {
    Cell {
        seed,
        k,
        loglik_error: f64::NAN,
        l1_param_error: f64::NAN,
        perturbed_loglik_error: f64::NAN,
        diagnostics,
        reason: Some(reason),
    }
}

fn total_loglik(params: &PlgParams, ts: &TraceSet) -> plg_core::Result<f64> {
    let schedule = params.filter_schedule(ts.trace_len())?;
    ts.traces().map(|ys| params.loglik_scheduled(&schedule, ys)).sum()
}

fn run_cell(data: &SeedData, seed: u64, k: usize) -> Cell {
    let ts = match data.corpus.prefix(k) {
        Ok(ts) => ts,
        Err(e) => return failed_cell(seed, k, None, e.to_string()),
    };
    let (learned, diag) = match ce_learn(&ts, CeOptions::default()) {
        Ok(r) => r,
        Err(e) => return failed_cell(seed, k, None, format!("learning: {e}")),
    };
    let l1 = match param_l1_error(&learned, &data.truth) {
        Ok(v) => v,
        Err(e) => return failed_cell(seed, k, Some(diag), e.to_string()),
    };
    let la = match total_loglik(&data.truth, &ts) {
        Ok(v) => v,
        Err(e) => return failed_cell(seed, k, Some(diag), format!("true model: {e}")),
    };
    let lt = match total_loglik(&learned, &ts) {
        Ok(v) => v,
        Err(e) => {
            let mut c = failed_cell(seed, k, Some(diag), format!("learned model: {e}"));
            c.l1_param_error = l1;
            return c;
        }
    };
    let kf = k as f64;
    let mut rng = seeds::rng(seeds::derive(seeds::derive(seed, PERTURB_STREAM), k as u64));
    let perturbed = perturb_params(&data.truth, l1, &mut rng, PERTURB_ATTEMPTS)
        .and_then(|p| total_loglik(&p, &ts).ok())
        .map_or(f64::NAN, |lp| (lp - la).abs() / kf);
    Cell {
        seed,
        k,
        loglik_error: (lt - la) / kf,
        l1_param_error: l1,
        perturbed_loglik_error: perturbed,
        diagnostics: Some(diag),
        reason: None,
    }
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Vec<Cell> {
    let kmax = *cfg.k_grid.last().expect("validated non-empty");
    match seed_data(cfg, seed, kmax) {
        Ok(data) => cfg.k_grid.iter().map(|&k| run_cell(&data, seed, k)).collect(),
        Err(e) => cfg
            .k_grid
            .iter()
            .map(|&k| failed_cell(seed, k, None, format!("setup: {e}")))
            .collect(),
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let per_seed: Vec<Vec<Cell>> = cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect();
    Ok(ExperimentReport {
        config: cfg.clone(),
        cells: per_seed.into_iter().flatten().collect(),
    })
}

/// Medians and quartiles of one metric at one K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    #[serde(rename = "K")]
    pub k: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub valid: usize,
}

/// Machine-readable trend checks over the K grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdicts {
    pub l1_param_error: Vec<Summary>,
    pub abs_loglik_error: Vec<Summary>,
    pub perturbed_loglik_error: Vec<Summary>,
    pub failed_cells: usize,
    pub median_l1_strictly_decreasing: bool,
    pub median_loglik_strictly_decreasing: bool,
    /// Share of seeds whose L1 error at the largest K is below the one at
    /// the smallest K. Seeds with a failed end cell count as not improved.
    pub seeds_l1_improved_fraction: f64,
    /// Median |loglik error| over median perturbed-truth error at the largest K.
    pub loglik_to_perturbed_ratio: f64,
}

impl ExperimentReport {
    fn column(&self, k: usize, f: impl Fn(&Cell) -> f64) -> Vec<f64> {
        self.cells.iter().filter(|c| c.k == k).map(f).collect()
    }

    fn summaries(&self, f: impl Fn(&Cell) -> f64 + Copy) -> Vec<Summary> {
        self.config
            .k_grid
            .iter()
            .map(|&k| {
                let col = self.column(k, f);
                let (median, q25, q75) = summarize(&col);
                Summary {
                    k,
                    median,
                    q25,
                    q75,
                    valid: col.iter().filter(|v| v.is_finite()).count(),
                }
            })
            .collect()
    }

    pub fn verdicts(&self) -> Verdicts {
        let l1 = self.summaries(|c| c.l1_param_error);
        let ll = self.summaries(|c| c.loglik_error.abs());
        let pert = self.summaries(|c| c.perturbed_loglik_error);
        let decreasing =
            |s: &[Summary]| s.windows(2).all(|w| w[1].median < w[0].median);
        let (kmin, kmax) = (self.config.k_grid[0], *self.config.k_grid.last().unwrap());
        let improved = self
            .config
            .seeds
            .iter()
            .filter(|&&s| {
                let at = |k| {
                    self.cells
                        .iter()
                        .find(|c| c.seed == s && c.k == k)
                        .map_or(f64::NAN, |c| c.l1_param_error)
                };
                at(kmax) < at(kmin)
            })
            .count();
        let last = |s: &[Summary]| s.last().map_or(f64::NAN, |x| x.median);
        Verdicts {
            median_l1_strictly_decreasing: decreasing(&l1),
            median_loglik_strictly_decreasing: decreasing(&ll),
            seeds_l1_improved_fraction: improved as f64 / self.config.seeds.len() as f64,
            loglik_to_perturbed_ratio: last(&ll) / last(&pert),
            failed_cells: self.cells.iter().filter(|c| c.reason.is_some()).count(),
            l1_param_error: l1,
            abs_loglik_error: ll,
            perturbed_loglik_error: pert,
        }
    }

    pub fn report_csv(&self) -> String {
        let mut out = String::from(
            "seed,K,loglik_error,l1_param_error,perturbed_loglik_error,gamma_condition,umt_ok,psd_violation,reason\n",
        );
        for c in &self.cells {
            let (gamma, umt, psd) = match &c.diagnostics {
                Some(d) => (
                    format_f64(d.gamma_condition),
                    d.umt_ok.to_string(),
                    d.psd_violation.to_string(),
                ),
                None => (String::new(), String::new(), String::new()),
            };
            let reason = c.reason.as_deref().unwrap_or("").replace(['"', ',', '\n'], " ");
            writeln!(
                out,
                "{},{},{},{},{},{gamma},{umt},{psd},{reason}",
                c.seed,
                c.k,
                format_f64(c.loglik_error),
                format_f64(c.l1_param_error),
                format_f64(c.perturbed_loglik_error),
            )
            .expect("writing to a String");
        }
        out
    }

    /// Writes `report.csv`, `verdicts.json` and one `plotdata_<metric>.csv`
    /// per metric into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<Verdicts> {
        std::fs::create_dir_all(dir)
            .map_err(|e| HarnessError::io(format!("creating {}", dir.display()), e))?;
        let verdicts = self.verdicts();
        let write = |name: &str, body: &str| {
            let path = dir.join(name);
            std::fs::write(&path, body)
                .map_err(|e| HarnessError::io(format!("writing {}", path.display()), e))
        };
        write("report.csv", &self.report_csv())?;
        write("verdicts.json", &json::to_string(&verdicts)?)?;
        for (name, s) in [
            ("l1_param_error", &verdicts.l1_param_error),
            ("loglik_error", &verdicts.abs_loglik_error),
            ("perturbed_loglik_error", &verdicts.perturbed_loglik_error),
        ] {
            write(&format!("plotdata_{name}.csv"), &plot_csv(s))?;
        }
        Ok(verdicts)
    }
}

fn plot_csv(rows: &[Summary]) -> String {
    let mut out = String::from("K,median,q25,q75\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.k,
            format_f64(r.median),
            format_f64(r.q25),
            format_f64(r.q75)
        )
        .expect("writing to a String");
    }
    out
}
