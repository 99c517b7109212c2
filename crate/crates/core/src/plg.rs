//! The predictive linear-Gaussian model.
//!
//! The state at time `t` is the mean `μ_t` and covariance `Σ_t` of the next
//! `n` observations `Z_t = [Y_{t+1} … Y_{t+n}]ᵀ` given the history. Beyond the
//! window, `Y_{t+n+1} = gᵀ Z_t + η` where `η` has variance `σ²` and covariance
//! `C` with `Z_t`, for every history.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{self, GaussianDist, VARIANCE_FLOOR};
use crate::json;
use crate::linalg;
use crate::trace::Trace;

/// Tolerance used for the PSD checks on `Σ₀` and on filtered `Σ_t`.
pub const PSD_TOL: f64 = 1e-10;

/// Number of free parameters of an `n`-dimensional PLG:
/// `μ₀`, the distinct entries of `Σ₀`, `g`, `C` and `σ²`.
pub fn plg_param_count(n: usize) -> usize {
    n * (n + 1) / 2 + 3 * n + 1
}

/// Number of free parameters of an `n`-dimensional scalar-output LDS:
/// `A`, `H`, the distinct entries of `Q` and `P₁⁻`, `R` and `x̂₁⁻`.
pub fn lds_param_count(n: usize) -> usize {
    2 * n * n + 3 * n + 1
}

/// Shift matrix with `gᵀ` as its last row.
pub fn build_g_matrix(g: &DVector<f64>) -> DMatrix<f64> {
    let n = g.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        m[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        m[(n - 1, j)] = g[j];
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlgParamsWire", into = "PlgParamsWire")]
pub struct PlgParams {
    mu0: DVector<f64>,
    sigma0: DMatrix<f64>,
    g: DVector<f64>,
    c: DVector<f64>,
    sigma2: f64,
    g_mat: DMatrix<f64>,
}

impl PlgParams {
    pub fn new(
        mu0: DVector<f64>,
        sigma0: DMatrix<f64>,
        g: DVector<f64>,
        c: DVector<f64>,
        sigma2: f64,
    ) -> Result<Self> {
        let n = mu0.len();
        if n == 0 {
            return Err(Error::InvalidParams("dimension must be at least 1".into()));
        }
        for (name, len) in [("g", g.len()), ("C", c.len())] {
            if len != n {
                return Err(Error::InvalidParams(format!("{name} has length {len}, expected {n}")));
            }
        }
        if sigma0.shape() != (n, n) {
            return Err(Error::InvalidParams(format!(
                "Sigma0 is {}x{}, expected {n}x{n}",
                sigma0.nrows(),
                sigma0.ncols()
            )));
        }
        if mu0.iter().chain(g.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite entry".into()));
        }
        linalg::check_covariance(&sigma0, PSD_TOL, PSD_TOL)
            .map_err(|e| Error::InvalidParams(format!("Sigma0 {e}")))?;
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidParams(format!("sigma2 = {sigma2} must be >= 0")));
        }
        let g_mat = build_g_matrix(&g);
        Ok(Self {
            mu0,
            sigma0,
            g,
            c,
            sigma2,
            g_mat,
        })
    }

    pub fn n(&self) -> usize {
        self.mu0.len()
    }
    pub fn mu0(&self) -> &DVector<f64> {
        &self.mu0
    }
    pub fn sigma0(&self) -> &DMatrix<f64> {
        &self.sigma0
    }
    pub fn g(&self) -> &DVector<f64> {
        &self.g
    }
    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
    pub fn g_matrix(&self) -> &DMatrix<f64> {
        &self.g_mat
    }

    /// Flat parameter vector: `μ₀`, upper triangle of `Σ₀` (row-major,
    /// diagonal included), `g`, `C`, `σ²`.
    pub fn flatten(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(plg_param_count(n));
        out.extend(self.mu0.iter());
        for i in 0..n {
            for j in i..n {
                out.push(self.sigma0[(i, j)]);
            }
        }
        out.extend(self.g.iter());
        out.extend(self.c.iter());
        out.push(self.sigma2);
        out
    }

    /// Inverse of [`PlgParams::flatten`]; the triangle is mirrored.
    pub fn from_flat(n: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != plg_param_count(n) {
            return Err(Error::DimensionMismatch {
                expected: plg_param_count(n),
                got: flat.len(),
            });
        }
        let mu0 = DVector::from_row_slice(&flat[..n]);
        let mut k = n;
        let mut sigma0 = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                sigma0[(i, j)] = flat[k];
                sigma0[(j, i)] = flat[k];
                k += 1;
            }
        }
        let g = DVector::from_row_slice(&flat[k..k + n]);
        let c = DVector::from_row_slice(&flat[k + n..k + 2 * n]);
        Self::new(mu0, sigma0, g, c, flat[k + 2 * n])
    }

    pub fn to_json(&self) -> Result<String> {
        json::to_string(self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Initial state `(μ₀, Σ₀)` at `t = 0`.
    pub fn initial_state(&self) -> PlgState {
        PlgState {
            mu: self.mu0.clone(),
            sigma: self.sigma0.clone(),
            t: 0,
            psd_ok: linalg::is_psd(&self.sigma0, PSD_TOL),
        }
    }

    /// `B = σ² e_n e_nᵀ + G C e_nᵀ + e_n Cᵀ Gᵀ`.
    fn noise_block(&self) -> DMatrix<f64> {
        let n = self.n();
        let gc = &self.g_mat * &self.c;
        let mut b = DMatrix::zeros(n, n);
        for i in 0..n {
            b[(i, n - 1)] += gc[i];
            b[(n - 1, i)] += gc[i];
        }
        b[(n - 1, n - 1)] += self.sigma2;
        b
    }

    /// `F = G Σ_t e₁ + C₁ e_n`.
    fn cross_term(&self, sigma: &DMatrix<f64>) -> DVector<f64> {
        let n = self.n();
        let mut f = &self.g_mat * sigma.column(0);
        f[n - 1] += self.c[0];
        f
    }

    fn check_state(&self, state: &PlgState) -> Result<()> {
        if state.mu.len() != self.n() || state.sigma.shape() != (self.n(), self.n()) {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: state.mu.len(),
            });
        }
        Ok(())
    }

    /// Conditions the state on `Y_{t+1} = y`:
    ///
    /// `μ_{t+1} = G μ_t + F (y − e₁ᵀμ_t) / (e₁ᵀΣ_t e₁)`,
    /// `Σ_{t+1} = G Σ_t Gᵀ + B − F Fᵀ / (e₁ᵀΣ_t e₁)`.
    pub fn update(&self, state: &PlgState, y: f64) -> Result<PlgState> {
        self.update_with(state, y, true)
    }

    fn update_with(&self, state: &PlgState, y: f64, check_psd: bool) -> Result<PlgState> {
        self.check_state(state)?;
        let s = state.sigma[(0, 0)];
        if !(s > VARIANCE_FLOOR) {
            return Err(Error::DegenerateVariance {
                variance: s,
                step: Some(state.t),
            });
        }
        let f = self.cross_term(&state.sigma);
        let innovation = y - state.mu[0];
        let mu = &self.g_mat * &state.mu + &f * (innovation / s);
        let sigma = &self.g_mat * &state.sigma * self.g_mat.transpose() + self.noise_block()
            - &f * f.transpose() / s;
        let sigma = linalg::symmetrize(&sigma);
        let psd_ok = if check_psd {
            linalg::is_psd(&sigma, PSD_TOL)
        } else {
            state.psd_ok
        };
        Ok(PlgState {
            mu,
            sigma,
            t: state.t + 1,
            psd_ok,
        })
    }

    /// Joint distribution of `Y_{t+1} … Y_{t+n+m}` given the history.
    ///
    /// Each appended coordinate is `gᵀW + η` over the trailing window `W`; the
    /// new `η` has covariance `C` with `W` and zero with older coordinates.
    pub fn extend(&self, state: &PlgState, m: usize) -> Result<GaussianDist> {
        self.check_state(state)?;
        let n = self.n();
        let dim = n + m;
        let mut mean = DVector::zeros(dim);
        let mut cov = DMatrix::zeros(dim, dim);
        mean.rows_mut(0, n).copy_from(&state.mu);
        cov.view_mut((0, 0), (n, n)).copy_from(&state.sigma);
        let c_dot_g = self.c.dot(&self.g);
        for s in 0..m {
            let k = n + s;
            mean[k] = (0..n).map(|i| self.g[i] * mean[s + i]).sum();
            for j in 0..k {
                let mut v: f64 = (0..n).map(|i| self.g[i] * cov[(s + i, j)]).sum();
                if j >= s {
                    v += self.c[j - s];
                }
                cov[(k, j)] = v;
                cov[(j, k)] = v;
            }
            let window: f64 = (0..n).map(|i| self.g[i] * cov[(k, s + i)]).sum();
            cov[(k, k)] = window + c_dot_g + self.sigma2;
        }
        Ok(GaussianDist::new_unchecked(mean, cov))
    }

    /// Log-likelihood of a trace, chaining one-step predictive densities.
    pub fn loglik(&self, trace: &Trace) -> Result<f64> {
        let mut state = self.initial_state();
        let mut total = 0.0;
        for (t, &y) in trace.ys().iter().enumerate() {
            let (m, v) = state.predictive_moments();
            total += gauss::log_density_scalar(m, v, y).map_err(|_| Error::DegenerateVariance {
                variance: v,
                step: Some(t),
            })?;
            if t + 1 < trace.len() {
                state = self.update_with(&state, y, false)?;
            }
        }
        Ok(total)
    }

    /// Precomputes the observation-independent part of filtering `steps`
    /// observations: `Σ_t` does not depend on the data, so the predictive
    /// variances and gains are shared by every trace.
    pub fn filter_schedule(&self, steps: usize) -> Result<FilterSchedule> {
        let mut sigma = self.sigma0.clone();
        let mut variances = Vec::with_capacity(steps);
        let mut gains = Vec::with_capacity(steps);
        let mut psd_ok = linalg::is_psd(&sigma, PSD_TOL);
        let b = self.noise_block();
        for t in 0..steps {
            let s = sigma[(0, 0)];
            if !(s > VARIANCE_FLOOR) {
                return Err(Error::DegenerateVariance {
                    variance: s,
                    step: Some(t),
                });
            }
            variances.push(s);
            if t + 1 == steps {
                break;
            }
            let f = self.cross_term(&sigma);
            let next = &self.g_mat * &sigma * self.g_mat.transpose() + &b - &f * f.transpose() / s;
            sigma = linalg::symmetrize(&next);
            psd_ok &= linalg::is_psd(&sigma, PSD_TOL);
            gains.push(f / s);
        }
        Ok(FilterSchedule {
            variances,
            gains,
            psd_ok,
        })
    }

    /// Log-likelihood of a trace using a precomputed schedule.
    pub fn loglik_scheduled(&self, schedule: &FilterSchedule, ys: &[f64]) -> Result<f64> {
        if ys.len() > schedule.variances.len() {
            return Err(Error::InvalidArgument(format!(
                "schedule covers {} steps, trace has {}",
                schedule.variances.len(),
                ys.len()
            )));
        }
        let n = self.n();
        let mut mu = self.mu0.clone();
        let mut next = DVector::zeros(n);
        let mut total = 0.0;
        for (t, &y) in ys.iter().enumerate() {
            let v = schedule.variances[t];
            total += gauss::log_density_scalar(mu[0], v, y)?;
            if t + 1 < ys.len() {
                let innovation = y - mu[0];
                let extension = self.g.dot(&mu);
                for i in 0..n - 1 {
                    next[i] = mu[i + 1];
                }
                next[n - 1] = extension;
                next.axpy(innovation, &schedule.gains[t], 1.0);
                std::mem::swap(&mut mu, &mut next);
            }
        }
        Ok(total)
    }

    /// Samples a trace of `len` observations by alternating one-step
    /// prediction and update.
    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Result<Trace> {
        let mut ys = Vec::with_capacity(len);
        self.sample_into(len, rng, &mut ys)?;
        Trace::new(ys)
    }

    pub(crate) fn sample_into<R: Rng + ?Sized>(
        &self,
        len: usize,
        rng: &mut R,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        if len == 0 {
            return Err(Error::InvalidArgument("trace length must be at least 1".into()));
        }
        let mut state = self.initial_state();
        for t in 0..len {
            let (m, v) = state.predictive_moments();
            let noiseless = v.abs() <= VARIANCE_FLOOR;
            if v < 0.0 && !noiseless {
                return Err(Error::DegenerateVariance {
                    variance: v,
                    step: Some(t),
                });
            }
            let y = if noiseless {
                m
            } else {
                m + v.sqrt() * rng.sample::<f64, _>(StandardNormal)
            };
            out.push(y);
            if t + 1 < len {
                state = if noiseless {
                    self.advance_noiseless(&state)?
                } else {
                    self.update_with(&state, y, false)?
                };
            }
        }
        Ok(())
    }

    /// State transition for a next observation that is known exactly. Only
    /// valid when the window carries no covariance with that observation.
    fn advance_noiseless(&self, state: &PlgState) -> Result<PlgState> {
        let f = self.cross_term(&state.sigma);
        if f.amax() > VARIANCE_FLOOR.sqrt() {
            return Err(Error::DegenerateVariance {
                variance: state.sigma[(0, 0)],
                step: Some(state.t),
            });
        }
        let sigma = &self.g_mat * &state.sigma * self.g_mat.transpose() + self.noise_block();
        Ok(PlgState {
            mu: &self.g_mat * &state.mu,
            sigma: linalg::symmetrize(&sigma),
            t: state.t + 1,
            psd_ok: state.psd_ok,
        })
    }
}

/// Per-step predictive variances and update gains `F_t / (e₁ᵀΣ_t e₁)`.
#[derive(Debug, Clone)]
pub struct FilterSchedule {
    pub variances: Vec<f64>,
    pub gains: Vec<DVector<f64>>,
    /// Every `Σ_t` in the schedule passed the tolerance PSD check.
    pub psd_ok: bool,
}

/// The sufficient statistic `(μ_t, Σ_t)` after `t` observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PlgState {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub t: usize,
    /// `Σ_t` passed the tolerance PSD check. Diagnostic only.
    pub psd_ok: bool,
}

impl PlgState {
    /// `N(e₁ᵀμ_t, e₁ᵀΣ_t e₁)`, the distribution of the next observation.
    pub fn predict_next(&self) -> GaussianDist {
        let (m, v) = self.predictive_moments();
        GaussianDist::scalar(m, v)
    }

    pub fn predictive_moments(&self) -> (f64, f64) {
        (self.mu[0], self.sigma[(0, 0)])
    }

    /// `(μ_t, Σ_t)` as a distribution over the window.
    pub fn window(&self) -> GaussianDist {
        GaussianDist::new_unchecked(self.mu.clone(), self.sigma.clone())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlgParamsWire {
    n: usize,
    mu0: Vec<f64>,
    #[serde(rename = "Sigma0")]
    sigma0: Vec<f64>,
    g: Vec<f64>,
    #[serde(rename = "C")]
    c: Vec<f64>,
    sigma2: f64,
}

impl TryFrom<PlgParamsWire> for PlgParams {
    type Error = Error;

    fn try_from(w: PlgParamsWire) -> Result<Self> {
        let n = w.n;
        if w.mu0.len() != n || w.sigma0.len() != n * n {
            return Err(Error::InvalidParams(format!(
                "n = {n} but mu0 has {} and Sigma0 has {} entries",
                w.mu0.len(),
                w.sigma0.len()
            )));
        }
        PlgParams::new(
            DVector::from_vec(w.mu0),
            DMatrix::from_row_slice(n, n, &w.sigma0),
            DVector::from_vec(w.g),
            DVector::from_vec(w.c),
            w.sigma2,
        )
    }
}

impl From<PlgParams> for PlgParamsWire {
    fn from(p: PlgParams) -> Self {
        let n = p.n();
        PlgParamsWire {
            n,
            mu0: p.mu0.iter().copied().collect(),
            sigma0: (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| p.sigma0[(i, j)])
                .collect(),
            g: p.g.iter().copied().collect(),
            c: p.c.iter().copied().collect(),
            sigma2: p.sigma2,
        }
    }
}
