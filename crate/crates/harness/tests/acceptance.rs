//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Run with `cargo test -p plg-harness --test acceptance`.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use plg_core::ce::{ce_learn, CeOptions, TraceSet};
use plg_core::{
    lds_param_count, lds_to_plg, plg_param_count, random_lds, seeds, Error, GenConfig, LdsParams,
    PlgParams, Trace,
};
use plg_harness::{run_experiment, ExperimentConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

// Pinned tolerances.
const FILTER_REL_TOL: f64 = 1e-8;
const LOGLIK_REL_TOL: f64 = 1e-6;
const UPDATE_TOL: f64 = 1e-10;
const MULTI_STEP_TOL: f64 = 1e-8;
const MC_TOL: f64 = 1e-2;
const MC_ROLLOUTS: usize = 1_000_000;
const SEEDS_IMPROVED_MIN: f64 = 0.9;
const PERTURBED_RATIO_MAX: f64 = 10.0;

type Outcome = Result<String, String>;

fn rel_diff(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(scale)
}

/// Filters one LDS trace with the Kalman filter and the converted PLG in
/// lockstep. Returns the worst mean/variance mismatch and the log-likelihood
/// mismatch, all relative.
fn compare_filters(lds: &LdsParams, plg: &PlgParams, ys: &[f64]) -> Result<(f64, f64, f64), Error> {
    let mut ks = lds.initial_state();
    let mut ps = plg.initial_state();
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for (t, &y) in ys.iter().enumerate() {
        let kd = lds.predictive(&ks);
        let (km, kv) = (kd.mean()[0], kd.cov()[(0, 0)]);
        let (pm, pv) = ps.predictive_moments();
        // Means are compared on the scale of the predictive spread so that
        // a near-zero mean does not inflate the ratio.
        worst_mean = worst_mean.max(rel_diff(km, pm, kv.sqrt()));
        worst_var = worst_var.max(rel_diff(kv, pv, 0.0));
        if t + 1 < ys.len() {
            ks = lds.update(&ks, y)?;
            ps = plg.update(&ps, y)?;
        }
    }
    let trace = Trace::new(ys.to_vec())?;
    let (lk, lp) = (lds.loglik(&trace)?, plg.loglik(&trace)?);
    Ok((worst_mean, worst_var, rel_diff(lk, lp, 0.0)))
}

fn criterion_1() -> Outcome {
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    let mut failures = Vec::new();
    for n in [1usize, 2, 4, 8] {
        let results: Vec<_> = (0..50u64)
            .into_par_iter()
            .map(|i| {
                let seed = 1000 * n as u64 + i;
                let lds = random_lds(&GenConfig::new(n, seed))?;
                let plg = lds_to_plg(&lds)?;
                let mut rng = seeds::rng(seeds::derive(seed, 99));
                let ys = lds.sample(10 * n, &mut rng)?;
                compare_filters(&lds, &plg, ys.ys()).map(|r| (seed, r))
            })
            .collect();
        for r in results {
            match r {
                Ok((seed, (m, v, l))) => {
                    worst = (worst.0.max(m), worst.1.max(v), worst.2.max(l));
                    if m > FILTER_REL_TOL || v > FILTER_REL_TOL || l > LOGLIK_REL_TOL {
                        failures.push(format!("n={n} seed={seed}: mean {m:.1e}, var {v:.1e}, loglik {l:.1e}"));
                    }
                }
                Err(e) => failures.push(format!("n={n}: {e}")),
            }
        }
    }
    let summary = format!(
        "200 systems; worst rel. mean {:.1e}, variance {:.1e}, loglik {:.1e}",
        worst.0, worst.1, worst.2
    );
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}; {} failing: {}", failures.len(), failures.join("; ")))
    }
}

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(n, n) * 0.1
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = 1 + case % 5;
        let uni = |rng: &mut ChaCha8Rng| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let sigma0 = random_spd(n, &mut rng);
        let params = PlgParams::new(
            uni(&mut rng),
            sigma0,
            uni(&mut rng),
            uni(&mut rng),
            rng.random_range(0.0..2.0),
        )
        .map_err(|e| e.to_string())?;
        let mut state = params.initial_state();
        state.mu = uni(&mut rng) * 3.0;
        state.sigma = random_spd(n, &mut rng);
        let y: f64 = rng.random_range(-5.0..5.0);

        let updated = params.update(&state, y).map_err(|e| e.to_string())?;
        // Condition the explicit joint of the next n + 1 observations on the first.
        let joint = params.extend(&state, 1).map_err(|e| e.to_string())?;
        let (m, c) = (joint.mean(), joint.cov());
        let s = c[(0, 0)];
        let cross: DVector<f64> = c.column(0).rows(1, n).into_owned();
        let mean = m.rows(1, n).into_owned() + &cross * ((y - m[0]) / s);
        let cov = c.view((1, 1), (n, n)).into_owned() - &cross * cross.transpose() / s;

        let scale = 1.0 + mean.amax().max(cov.amax());
        let err = (&updated.mu - &mean).amax().max((&updated.sigma - &cov).amax()) / scale;
        worst = worst.max(err);
    }
    if worst <= UPDATE_TOL {
        Ok(format!("1000 instances, worst scaled error {worst:.1e}"))
    } else {
        Err(format!("worst scaled error {worst:.1e} exceeds {UPDATE_TOL:e}"))
    }
}

/// Sample covariance of `Y_1, Y_2` over many independent LDS rollouts.
fn monte_carlo_moments(lds: &LdsParams) -> Result<([f64; 2], [[f64; 2]; 2]), Error> {
    const BLOCKS: usize = 1000;
    let per_block = MC_ROLLOUTS / BLOCKS;
    let parts = (0..BLOCKS)
        .into_par_iter()
        .map(|b| {
            let mut rng = seeds::rng(seeds::derive(31, b as u64));
            let mut acc = [0.0f64; 5];
            for _ in 0..per_block {
                let ys = lds.sample(2, &mut rng)?;
                let (a, c) = (ys.ys()[0], ys.ys()[1]);
                for (slot, v) in acc.iter_mut().zip([a, c, a * a, a * c, c * c]) {
                    *slot += v;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let mut s = [0.0f64; 5];
    for p in parts {
        for (x, y) in s.iter_mut().zip(p) {
            *x += y;
        }
    }
    let k = MC_ROLLOUTS as f64;
    let (m1, m2) = (s[0] / k, s[1] / k);
    let cov = |sxy: f64, mx: f64, my: f64| (sxy - k * mx * my) / (k - 1.0);
    Ok((
        [m1, m2],
        [[cov(s[2], m1, m1), cov(s[3], m1, m2)], [cov(s[3], m1, m2), cov(s[4], m2, m2)]],
    ))
}

fn criterion_3() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for n in [1usize, 2, 3, 4] {
        for i in 0..10u64 {
            let seed = 3000 + 100 * n as u64 + i;
            let lds = random_lds(&GenConfig::new(n, seed)).map_err(|e| e.to_string())?;
            let plg = lds_to_plg(&lds).map_err(|e| e.to_string())?;
            let mut rng = seeds::rng(seed);
            let ys = lds.sample(3 * n, &mut rng).map_err(|e| e.to_string())?;
            // Compare at several points along the trace, including t = 0.
            let (mut ks, mut ps) = (lds.initial_state(), plg.initial_state());
            for (t, &y) in ys.ys().iter().enumerate() {
                if t % n == 0 {
                    let joint = plg.extend(&ps, n).map_err(|e| e.to_string())?;
                    for a in 1..=2 * n {
                        for b in a..=2 * n {
                            let (mean, cov) = lds.multi_step(&ks, a, b).map_err(|e| e.to_string())?;
                            let scale = 1.0 + mean.abs().max(cov.abs());
                            let em = (joint.mean()[a - 1] - mean).abs();
                            let ec = (joint.cov()[(a - 1, b - 1)] - cov).abs();
                            worst = worst.max(em.max(ec) / scale);
                            checked += 1;
                        }
                    }
                }
                ks = lds.update(&ks, y).map_err(|e| e.to_string())?;
                ps = plg.update(&ps, y).map_err(|e| e.to_string())?;
            }
        }
    }
    let lds = LdsParams::new(
        DMatrix::from_element(1, 1, 0.9),
        DVector::from_element(1, 1.0),
        DMatrix::from_element(1, 1, 0.5),
        1.0,
        DVector::from_element(1, 1.0),
        DMatrix::from_element(1, 1, 2.0),
    )
    .map_err(|e| e.to_string())?;
    let plg = lds_to_plg(&lds).map_err(|e| e.to_string())?;
    let joint = plg.extend(&plg.initial_state(), 1).map_err(|e| e.to_string())?;
    let (mc_mean, mc_cov) = monte_carlo_moments(&lds).map_err(|e| e.to_string())?;
    let mut mc_worst = 0.0f64;
    for a in 0..2 {
        mc_worst = mc_worst.max((joint.mean()[a] - mc_mean[a]).abs());
        for b in 0..2 {
            mc_worst = mc_worst.max((joint.cov()[(a, b)] - mc_cov[a][b]).abs());
        }
    }
    let summary = format!(
        "{checked} entries, worst scaled error {worst:.1e}; Monte Carlo worst {mc_worst:.1e} over {MC_ROLLOUTS} rollouts"
    );
    if worst <= MULTI_STEP_TOL && mc_worst <= MC_TOL {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn sweep_config() -> ExperimentConfig {
    ExperimentConfig {
        n: 2,
        trace_len: Some(20),
        k_grid: vec![100, 1000, 10_000],
        seeds: (1..=20).collect(),
        r_mode: Default::default(),
        output_dir: None,
        trace_source: Default::default(),
    }
}

fn fmt_medians(s: &[plg_harness::experiment::Summary]) -> String {
    s.iter()
        .map(|x| format!("K={}: {:.3e}", x.k, x.median))
        .collect::<Vec<_>>()
        .join(", ")
}

fn criteria_4_and_5() -> (Outcome, Outcome) {
    let report = match run_experiment(&sweep_config()) {
        Ok(r) => r,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let v = report.verdicts();
    let c4 = format!(
        "median L1 error {}; {:.0}% of seeds improved; {} failed cells",
        fmt_medians(&v.l1_param_error),
        100.0 * v.seeds_l1_improved_fraction,
        v.failed_cells
    );
    let c4 = if v.median_l1_strictly_decreasing && v.seeds_l1_improved_fraction >= SEEDS_IMPROVED_MIN {
        Ok(c4)
    } else {
        Err(c4)
    };
    let ratio = v.loglik_to_perturbed_ratio;
    let c5 = format!(
        "median |loglik error| {}; perturbed-truth reference at largest K {:.3e}; ratio {ratio:.2e} (limit {PERTURBED_RATIO_MAX})",
        fmt_medians(&v.abs_loglik_error),
        v.perturbed_loglik_error.last().map_or(f64::NAN, |s| s.median),
    );
    // The perturbed-truth value is an upper reference: learning must not do
    // more than 10x worse than an estimate at the same L1 distance.
    let within = ratio.is_finite() && ratio <= PERTURBED_RATIO_MAX;
    let c5 = if v.median_loglik_strictly_decreasing && within {
        Ok(c5)
    } else {
        Err(c5)
    };
    (c4, c5)
}

fn criterion_6() -> Outcome {
    for n in 1..=16usize {
        let diff = lds_param_count(n) - plg_param_count(n);
        if diff != (3 * n * n - n) / 2 {
            return Err(format!("n={n}: difference {diff}"));
        }
    }
    Ok("n = 1..16 exact".into())
}

fn scalar_plg(mu0: f64, s0: f64, g: f64, c: f64, s2: f64) -> PlgParams {
    PlgParams::new(
        DVector::from_element(1, mu0),
        DMatrix::from_element(1, 1, s0),
        DVector::from_element(1, g),
        DVector::from_element(1, c),
        s2,
    )
    .expect("valid scalar params")
}

/// Each case returns `Ok(())` when the documented outcome is observed.
type Case = Box<dyn Fn() -> Result<(), String>>;

fn degenerate_cases() -> Vec<(&'static str, Case)> {
    vec![
        (
            "identical traces",
            Box::new(|| {
                let ts = TraceSet::new(vec![vec![0.4, -1.2, 0.7, 2.0]; 6], 2).map_err(|e| e.to_string())?;
                let (p, d) = ce_learn(&ts, CeOptions::default()).map_err(|e| e.to_string())?;
                if p.sigma0().amax() != 0.0 || !d.psd_violation {
                    return Err(format!("Sigma0 {:?}, diagnostics {d:?}", p.sigma0()));
                }
                Ok(())
            }),
        ),
        (
            "all-zero traces",
            Box::new(|| {
                let ts = TraceSet::new(vec![vec![0.0; 6]; 4], 2).map_err(|e| e.to_string())?;
                let (p, d) = ce_learn(&ts, CeOptions::default()).map_err(|e| e.to_string())?;
                if d.umt_ok || !d.psd_violation || p.g().amax() != 0.0 {
                    return Err(format!("diagnostics {d:?}, g {:?}", p.g()));
                }
                Ok(())
            }),
        ),
        (
            "zero initial mean",
            Box::new(|| {
                // A corpus closed under negation has sample means exactly zero,
                // the empirical image of a system with zero initial mean.
                let truth = scalar_plg(0.0, 1.0, 0.8, 0.1, 0.5);
                let mut rng = seeds::rng(7);
                let mut traces = Vec::new();
                for _ in 0..200 {
                    let ys = truth.sample(6, &mut rng).map_err(|e| e.to_string())?.into_inner();
                    traces.push(ys.iter().map(|y| -y).collect());
                    traces.push(ys);
                }
                let ts = TraceSet::new(traces, 1).map_err(|e| e.to_string())?;
                let (p, d) = ce_learn(&ts, CeOptions::default()).map_err(|e| e.to_string())?;
                if d.umt_ok || d.gamma_condition.is_finite() || p.g()[0] != 0.0 {
                    return Err(format!("diagnostics {d:?}, g {:?}", p.g()));
                }
                Ok(())
            }),
        ),
        (
            "noiseless system",
            Box::new(|| {
                let lds = LdsParams::new(
                    DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.3]),
                    DVector::from_row_slice(&[1.0, 0.0]),
                    DMatrix::zeros(2, 2),
                    0.0,
                    DVector::from_row_slice(&[1.0, -2.0]),
                    DMatrix::zeros(2, 2),
                )
                .map_err(|e| e.to_string())?;
                let plg = lds_to_plg(&lds).map_err(|e| e.to_string())?;
                if plg.sigma2() != 0.0 || plg.sigma0().amax() != 0.0 {
                    return Err(format!("sigma2 {}, Sigma0 {:?}", plg.sigma2(), plg.sigma0()));
                }
                let tr = plg.sample(6, &mut seeds::rng(1)).map_err(|e| e.to_string())?;
                match plg.loglik(&tr) {
                    Err(Error::DegenerateVariance { step: Some(0), .. }) => {}
                    other => return Err(format!("loglik gave {other:?}")),
                }
                match lds.loglik(&tr) {
                    Err(Error::DegenerateVariance { step: Some(0), .. }) => Ok(()),
                    other => Err(format!("Kalman loglik gave {other:?}")),
                }
            }),
        ),
        (
            "singular initial covariance",
            Box::new(|| {
                let p = PlgParams::new(
                    DVector::from_row_slice(&[1.0, 0.5]),
                    DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
                    DVector::from_row_slice(&[0.2, 0.5]),
                    DVector::from_row_slice(&[0.0, 0.0]),
                    1.0,
                )
                .map_err(|e| e.to_string())?;
                // After the first observation the second is known exactly.
                let tr = Trace::new(vec![0.3, 1.0, -0.5]).map_err(|e| e.to_string())?;
                match p.loglik(&tr) {
                    Err(Error::DegenerateVariance { step: Some(1), .. }) => {}
                    other => return Err(format!("loglik gave {other:?}")),
                }
                let q = PlgParams::new(
                    DVector::from_row_slice(&[1.0, 0.5]),
                    DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
                    DVector::from_row_slice(&[0.2, 0.5]),
                    DVector::from_row_slice(&[0.0, 0.0]),
                    1.0,
                )
                .map_err(|e| e.to_string())?;
                match q.update(&q.initial_state(), 1.0) {
                    Err(Error::DegenerateVariance { step: Some(0), .. }) => Ok(()),
                    other => Err(format!("update gave {other:?}")),
                }
            }),
        ),
    ]
}

fn criterion_7() -> Outcome {
    let mut failures = Vec::new();
    let cases = degenerate_cases();
    let total = cases.len();
    for (name, case) in cases {
        match panic::catch_unwind(AssertUnwindSafe(case)) {
            Ok(Ok(())) => {}
            Ok(Err(msg)) => failures.push(format!("{name}: {msg}")),
            Err(_) => failures.push(format!("{name}: panicked")),
        }
    }
    if failures.is_empty() {
        Ok(format!("{total} degenerate cases behave as documented"))
    } else {
        Err(failures.join("; "))
    }
}

fn run_cli_experiment(config: &Path, out: &Path, threads: &str) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_plg"))
        .args(["experiment", "--config"])
        .arg(config)
        .arg("--output-dir")
        .arg(out)
        .env("RAYON_NUM_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    Ok(())
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"n": 2, "trace_len": 20, "k_grid": [100, 1000, 5000], "seeds": [1, 2, 3, 4, 5, 6, 7, 8]}"#,
    )
    .map_err(|e| e.to_string())?;
    let runs = [("run-a", "1"), ("run-b", "4"), ("run-c", "4")];
    for (name, threads) in runs {
        run_cli_experiment(&config, &dir.path().join(name), threads)?;
    }
    let mut files: Vec<_> = std::fs::read_dir(dir.path().join("run-a"))
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.file_name()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    files.sort();
    for f in &files {
        let reference = std::fs::read(dir.path().join("run-a").join(f)).map_err(|e| e.to_string())?;
        for (name, _) in &runs[1..] {
            let other = std::fs::read(dir.path().join(name).join(f)).map_err(|e| e.to_string())?;
            if other != reference {
                return Err(format!("{} differs in {name}", f.to_string_lossy()));
            }
        }
    }
    Ok(format!(
        "{} output files byte-identical across 1-thread and 4-thread runs",
        files.len()
    ))
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    results.push((1, "LDS/PLG filter equivalence", criterion_1()));
    results.push((2, "update equals conditioning of the extension", criterion_2()));
    results.push((3, "multi-step prediction", criterion_3()));
    let (c4, c5) = criteria_4_and_5();
    results.push((4, "parameter error consistency trend", c4));
    results.push((5, "log-likelihood error trend", c5));
    results.push((6, "parameter-count identity", criterion_6()));
    results.push((7, "degenerate inputs", criterion_7()));
    results.push((8, "experiment determinism", criterion_8()));

    let mut failed = 0;
    for (id, name, outcome) in &results {
        match outcome {
            Ok(msg) => println!("[PASS] {id}. {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] {id}. {name}: {msg}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
