//! Consistent estimation of PLG parameters from a corpus of traces.
//!
//! Every estimator is a moment of the data: the initial state from the sample
//! moments of the first `n` observations, the trend `g` from a regression of
//! the cross-trace mean sequence on its own lags, and the noise statistics
//! `C`, `σ²` from the residuals of that regression.
//!
//! Sums over traces are accumulated in fixed blocks that may run in parallel;
//! the block partials are combined in a fixed pairwise order so the result
//! does not depend on scheduling.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::VARIANCE_FLOOR;
use crate::linalg;
use crate::plg::PlgParams;

/// Relative singular-value cutoff for the rank of the lagged-mean matrix.
pub const UMT_RANK_TOL: f64 = 1e-8;

const BLOCK: usize = 256;

/// `K` equal-length traces and the model dimension `n` to fit.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    data: Vec<f64>,
    k: usize,
    len: usize,
    n: usize,
}

impl TraceSet {
    pub fn new(traces: Vec<Vec<f64>>, n: usize) -> Result<Self> {
        let k = traces.len();
        let len = traces.first().map_or(0, Vec::len);
        if traces.iter().any(|t| t.len() != len) {
            return Err(Error::InvalidTraceSet("traces differ in length".into()));
        }
        Self::from_flat(traces.into_iter().flatten().collect(), k, len, n)
    }

    /// `data` holds trace `k` at `data[k * len .. (k + 1) * len]`.
    pub fn from_flat(data: Vec<f64>, k: usize, len: usize, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidTraceSet("model dimension must be at least 1".into()));
        }
        if k < 2 {
            return Err(Error::InvalidTraceSet(format!("need at least 2 traces, got {k}")));
        }
        if len < 2 * n {
            return Err(Error::InvalidTraceSet(format!(
                "traces of length {len} are shorter than 2n = {}",
                2 * n
            )));
        }
        if data.len() != k * len {
            return Err(Error::InvalidTraceSet(format!(
                "{} values do not form {k} traces of length {len}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTraceSet("non-finite observation".into()));
        }
        Ok(Self { data, k, len, n })
    }

    pub fn num_traces(&self) -> usize {
        self.k
    }

    pub fn trace_len(&self) -> usize {
        self.len
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn trace(&self, k: usize) -> &[f64] {
        &self.data[k * self.len..(k + 1) * self.len]
    }

    pub fn traces(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.len)
    }

    /// The first `k` traces as a new set.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k > self.k {
            return Err(Error::InvalidTraceSet(format!("only {} traces available", self.k)));
        }
        Self::from_flat(self.data[..k * self.len].to_vec(), k, self.len, self.n)
    }

    /// Applies `f` to each trace and sums the resulting vectors
    /// deterministically.
    fn reduce<F>(&self, width: usize, f: F) -> Vec<f64>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        let partials: Vec<Vec<f64>> = self
            .data
            .par_chunks(BLOCK * self.len)
            .map(|block| {
                let mut acc = vec![0.0; width];
                for tr in block.chunks_exact(self.len) {
                    f(tr, &mut acc);
                }
                acc
            })
            .collect();
        pairwise_sum(partials, width)
    }
}

fn pairwise_sum(mut parts: Vec<Vec<f64>>, width: usize) -> Vec<f64> {
    if parts.is_empty() {
        return vec![0.0; width];
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().expect("non-empty")
}

/// Diagnostics reported alongside learned parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeDiagnostics {
    /// Condition number of `Γ̂ᵀΓ̂`; infinite when `Γ̂` is singular
    /// (serialized as `null`).
    #[serde(with = "finite_or_null")]
    pub gamma_condition: f64,
    /// `Γ̂` has full column rank at the relative tolerance [`UMT_RANK_TOL`].
    pub umt_ok: bool,
    /// Filtering one training trace with the learned parameters produced a
    /// non-PSD `Σ_t` or a non-positive predictive variance.
    pub psd_violation: bool,
}

impl CeDiagnostics {
    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(self)
    }
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Sample mean and unbiased sample covariance of the first `n` observations.
pub fn estimate_initial(ts: &TraceSet) -> (DVector<f64>, DMatrix<f64>) {
    let n = ts.n;
    // Deviations from the first trace keep the mean exact when all traces agree.
    let shift = ts.trace(0)[..n].to_vec();
    let sums = ts.reduce(n, |tr, acc| {
        for i in 0..n {
            acc[i] += tr[i] - shift[i];
        }
    });
    let kf = ts.k as f64;
    let mean: Vec<f64> = sums.iter().zip(&shift).map(|(s, c)| c + s / kf).collect();
    let cross = ts.reduce(n * n, |tr, acc| {
        for i in 0..n {
            let di = tr[i] - mean[i];
            for j in i..n {
                acc[i * n + j] += di * (tr[j] - mean[j]);
            }
        }
    });
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = cross[i * n + j] / (kf - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (DVector::from_vec(mean), cov)
}

/// Cross-trace sample mean `ȳ_t` for every time step.
pub fn sample_means(ts: &TraceSet) -> Vec<f64> {
    let len = ts.len;
    let sums = ts.reduce(len, |tr, acc| {
        acc.iter_mut().zip(tr).for_each(|(a, y)| *a += y);
    });
    sums.into_iter().map(|s| s / ts.k as f64).collect()
}

/// The lagged-mean regression `Γ̂ g ≈ Λ̂`: row `r` of `Γ̂` is
/// `ȳ_{r+1} … ȳ_{r+n}` and `Λ̂_r = ȳ_{r+n+1}` (1-based `ȳ`).
pub fn lagged_mean_system(means: &[f64], n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let rows = means.len() - n;
    let gamma = DMatrix::from_fn(rows, n, |r, c| means[r + c]);
    let lambda = DVector::from_fn(rows, |r, _| means[r + n]);
    (gamma, lambda)
}

#[derive(Debug, Clone)]
pub struct TrendEstimate {
    pub g: DVector<f64>,
    pub gamma_condition: f64,
    pub umt_ok: bool,
    pub rank: usize,
}

/// Least-squares trend `ĝ = (Γ̂ᵀΓ̂)⁻¹ Γ̂ᵀ Λ̂`.
///
/// When `Γ̂` is rank deficient the minimum-norm least-squares solution is
/// returned and `umt_ok` is false.
pub fn estimate_g(ts: &TraceSet) -> TrendEstimate {
    let means = sample_means(ts);
    trend_from_means(&means, ts.n)
}

pub fn trend_from_means(means: &[f64], n: usize) -> TrendEstimate {
    let (gamma, lambda) = lagged_mean_system(means, n);
    let sv = gamma.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let rank = sv.iter().filter(|&&s| s > UMT_RANK_TOL * smax && s > 0.0).count();
    let umt_ok = rank == n;
    let gamma_condition = if smin > 0.0 {
        (smax / smin).powi(2)
    } else {
        f64::INFINITY
    };
    let g = if umt_ok {
        let normal = gamma.transpose() * &gamma;
        let rhs = gamma.transpose() * &lambda;
        match Cholesky::new(normal) {
            Some(ch) => ch.solve(&rhs),
            None => linalg::min_norm_lstsq(&gamma, &lambda, UMT_RANK_TOL).x,
        }
    } else {
        linalg::min_norm_lstsq(&gamma, &lambda, UMT_RANK_TOL).x
    };
    TrendEstimate {
        g,
        gamma_condition,
        umt_ok,
        rank,
    }
}

/// Noise statistics from the regression residuals
/// `η̂_{t+n+1} = y_{t+n+1} − ĝᵀ z_t`, `t = 0 … N−n−1`:
///
/// `Ĉ_i = Σ y_{t+i} η̂_{t+n+1} / (K(N−n) − 1)`,
/// `σ̂² = Σ η̂²_{t+n+1} / (K(N−n) − 1)`.
pub fn estimate_noise(ts: &TraceSet, g_hat: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let n = ts.n;
    if g_hat.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: g_hat.len(),
        });
    }
    let steps = ts.len - n;
    let g: Vec<f64> = g_hat.iter().copied().collect();
    let sums = ts.reduce(n + 1, |tr, acc| {
        for t in 0..steps {
            let z = &tr[t..t + n];
            let eta = tr[t + n] - z.iter().zip(&g).map(|(y, gi)| y * gi).sum::<f64>();
            for i in 0..n {
                acc[i] += z[i] * eta;
            }
            acc[n] += eta * eta;
        }
    });
    let denom = (ts.k * steps) as f64 - 1.0;
    let c = DVector::from_fn(n, |i, _| sums[i] / denom);
    Ok((c, sums[n] / denom))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CeOptions {
    /// Floor negative eigenvalues of `Σ̂₀` at zero.
    pub clip_sigma0: bool,
}

/// Runs the full estimator and a validity probe over the first trace.
pub fn ce_learn(ts: &TraceSet, opts: CeOptions) -> Result<(PlgParams, CeDiagnostics)> {
    let (mu0, mut sigma0) = estimate_initial(ts);
    if opts.clip_sigma0 {
        let eig = SymmetricEigen::new(sigma0.clone());
        let vals = eig.eigenvalues.map(|v| v.max(0.0));
        sigma0 = linalg::symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()));
    }
    let trend = estimate_g(ts);
    let (c, sigma2) = estimate_noise(ts, &trend.g)?;
    let params = PlgParams::new(mu0, sigma0, trend.g, c, sigma2)?;
    let psd_violation = probe_violation(&params, ts.trace(0));
    Ok((
        params,
        CeDiagnostics {
            gamma_condition: trend.gamma_condition,
            umt_ok: trend.umt_ok,
            psd_violation,
        },
    ))
}

/// True if filtering `ys` hits a non-PSD state or a non-positive predictive
/// variance.
pub fn probe_violation(params: &PlgParams, ys: &[f64]) -> bool {
    let mut state = params.initial_state();
    for &y in ys {
        if !state.psd_ok || !(state.sigma[(0, 0)] > VARIANCE_FLOOR) {
            return true;
        }
        match params.update(&state, y) {
            Ok(next) => state = next,
            Err(_) => return true,
        }
    }
    !state.psd_ok
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(traces: Vec<Vec<f64>>, n: usize) -> TraceSet {
        TraceSet::new(traces, n).unwrap()
    }

    #[test]
    fn trace_set_validation() {
        assert!(TraceSet::new(vec![vec![1.0, 2.0]], 1).is_err());
        assert!(TraceSet::new(vec![vec![1.0, 2.0], vec![1.0]], 1).is_err());
        assert!(TraceSet::new(vec![vec![1.0, 2.0, 3.0]; 2], 2).is_err());
        assert!(TraceSet::new(vec![vec![1.0, f64::NAN]; 2], 1).is_err());
        assert!(TraceSet::new(vec![vec![1.0, 2.0]; 2], 0).is_err());
        assert!(TraceSet::new(vec![vec![1.0, 2.0]; 2], 1).is_ok());
    }

    #[test]
    fn initial_from_identical_traces() {
        let ts = set(vec![vec![1.0, 2.0, 3.0, 4.0]; 5], 2);
        let (mu, sigma) = estimate_initial(&ts);
        assert_eq!(mu.as_slice(), &[1.0, 2.0]);
        assert_eq!(sigma, DMatrix::zeros(2, 2));
    }

    #[test]
    fn initial_two_traces() {
        let ts = set(vec![vec![0.0, 5.0], vec![2.0, 7.0]], 1);
        let (mu, sigma) = estimate_initial(&ts);
        assert_eq!(mu[0], 1.0);
        assert_eq!(sigma[(0, 0)], 2.0);
    }

    #[test]
    fn trend_from_geometric_means() {
        let est = trend_from_means(&[1.0, 0.5, 0.25, 0.125], 1);
        assert!((est.g[0] - 0.5).abs() < 1e-15);
        assert!(est.umt_ok);
        assert!(est.gamma_condition >= 1.0);
    }

    #[test]
    fn trend_with_zero_means_is_flagged() {
        let ts = set(vec![vec![1.0, -1.0, 2.0, 0.5], vec![-1.0, 1.0, -2.0, -0.5]], 2);
        let est = estimate_g(&ts);
        assert!(!est.umt_ok);
        assert_eq!(est.g, DVector::zeros(2));
        assert!(est.gamma_condition.is_infinite());
    }

    #[test]
    fn noise_hand_example() {
        let ts = set(vec![vec![1.0, 2.0, 3.0]; 2], 1);
        let (c, s2) = estimate_noise(&ts, &DVector::from_element(1, 1.0)).unwrap();
        assert!((s2 - 4.0 / 3.0).abs() < 1e-15);
        assert!((c[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn noiseless_data_gives_zero_noise() {
        let g = [0.5, -0.3];
        let mut traces = Vec::new();
        for k in 0..4 {
            let mut y = vec![1.0 + k as f64, 0.5 * k as f64 - 1.0];
            for t in 2..8 {
                y.push(g[0] * y[t - 2] + g[1] * y[t - 1]);
            }
            traces.push(y);
        }
        let ts = set(traces, 2);
        let est = estimate_g(&ts);
        assert!(est.umt_ok);
        assert!((est.g[0] - g[0]).abs() <= 1e-10 && (est.g[1] - g[1]).abs() <= 1e-10);
        let (c, s2) = estimate_noise(&ts, &est.g).unwrap();
        assert!(c.amax() < 1e-10);
        assert!(s2 < 1e-20);
    }

    #[test]
    fn identical_traces_trip_the_probe() {
        let ts = set(vec![vec![1.0, 0.4, 0.3, 0.1, 0.05, 0.02]; 6], 2);
        let (p, diag) = ce_learn(&ts, CeOptions::default()).unwrap();
        assert_eq!(p.sigma0(), &DMatrix::zeros(2, 2));
        assert!(diag.psd_violation);
    }

    #[test]
    fn pairwise_sum_is_order_fixed() {
        let parts = vec![vec![1.0], vec![1e16], vec![-1e16], vec![1.0]];
        // ((1 + 1e16) + (-1e16 + 1)) in double precision
        assert_eq!(pairwise_sum(parts, 1), vec![0.0]);
        assert_eq!(pairwise_sum(vec![], 2), vec![0.0, 0.0]);
    }

    #[test]
    fn diagnostics_json_maps_infinity_to_null() {
        let d = CeDiagnostics {
            gamma_condition: f64::INFINITY,
            umt_ok: false,
            psd_violation: true,
        };
        let s = d.to_json().unwrap();
        assert!(s.contains("\"gamma_condition\":null"));
        let back: CeDiagnostics = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
    }
}
