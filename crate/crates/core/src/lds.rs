//! Scalar-observation linear dynamical systems and the Kalman filter.
//!
//! ```text
//! X_1 ~ N(x̂₁⁻, P₁⁻)
//! Y_t | X_t ~ N(H X_t, R)
//! X_{t+1} | X_t ~ N(A X_t, Q)
//! ```

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{self, GaussianDist, VARIANCE_FLOOR};
use crate::json;
use crate::linalg;
use crate::trace::Trace;

const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LdsParamsWire", into = "LdsParamsWire")]
pub struct LdsParams {
    a: DMatrix<f64>,
    h: DVector<f64>,
    q: DMatrix<f64>,
    r: f64,
    x1hat: DVector<f64>,
    p1: DMatrix<f64>,
}

impl LdsParams {
    /// `h` is the observation row `H` stored as a vector.
    pub fn new(
        a: DMatrix<f64>,
        h: DVector<f64>,
        q: DMatrix<f64>,
        r: f64,
        x1hat: DVector<f64>,
        p1: DMatrix<f64>,
    ) -> Result<Self> {
        let n = x1hat.len();
        if n == 0 {
            return Err(Error::InvalidParams("dimension must be at least 1".into()));
        }
        for (name, shape) in [("A", a.shape()), ("Q", q.shape()), ("P1", p1.shape())] {
            if shape != (n, n) {
                return Err(Error::InvalidParams(format!(
                    "{name} is {}x{}, expected {n}x{n}",
                    shape.0, shape.1
                )));
            }
        }
        if h.len() != n {
            return Err(Error::InvalidParams(format!("H has length {}, expected {n}", h.len())));
        }
        if a.iter().chain(h.iter()).chain(x1hat.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite entry".into()));
        }
        linalg::check_covariance(&q, PSD_TOL, PSD_TOL).map_err(|e| Error::InvalidParams(format!("Q {e}")))?;
        linalg::check_covariance(&p1, PSD_TOL, PSD_TOL).map_err(|e| Error::InvalidParams(format!("P1 {e}")))?;
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::InvalidParams(format!("R = {r} must be >= 0")));
        }
        Ok(Self { a, h, q, r, x1hat, p1 })
    }

    pub fn n(&self) -> usize {
        self.x1hat.len()
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> f64 {
        self.r
    }
    pub fn x1hat(&self) -> &DVector<f64> {
        &self.x1hat
    }
    pub fn p1(&self) -> &DMatrix<f64> {
        &self.p1
    }

    pub fn to_json(&self) -> Result<String> {
        json::to_string(self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Filter state before any observation: prior `(x̂₁⁻, P₁⁻)`.
    pub fn initial_state(&self) -> KalmanState {
        KalmanState {
            xhat_minus: self.x1hat.clone(),
            p_minus: self.p1.clone(),
            xhat: None,
            p: None,
            t: 0,
        }
    }

    fn check_state(&self, state: &KalmanState) -> Result<()> {
        if state.xhat_minus.len() != self.n() || state.p_minus.shape() != (self.n(), self.n()) {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: state.xhat_minus.len(),
            });
        }
        Ok(())
    }

    /// Measurement update with `y`, then the time update to the next prior.
    pub fn update(&self, state: &KalmanState, y: f64) -> Result<KalmanState> {
        self.check_state(state)?;
        let ph = &state.p_minus * &self.h;
        let s = self.h.dot(&ph) + self.r;
        if !(s > VARIANCE_FLOOR) {
            return Err(Error::DegenerateVariance {
                variance: s,
                step: Some(state.t),
            });
        }
        let gain = ph / s;
        let xhat = &state.xhat_minus + &gain * (y - self.h.dot(&state.xhat_minus));
        let n = self.n();
        let p = (DMatrix::identity(n, n) - &gain * self.h.transpose()) * &state.p_minus;
        let p = linalg::symmetrize(&p);
        let xhat_minus = &self.a * &xhat;
        let p_minus = linalg::symmetrize(&(&self.a * &p * self.a.transpose() + &self.q));
        Ok(KalmanState {
            xhat_minus,
            p_minus,
            xhat: Some(xhat),
            p: Some(p),
            t: state.t + 1,
        })
    }

    /// `N(H x̂⁻, H P⁻ Hᵀ + R)` for the next observation.
    pub fn predictive(&self, state: &KalmanState) -> GaussianDist {
        let (m, v) = self.predictive_moments(state);
        GaussianDist::scalar(m, v)
    }

    fn predictive_moments(&self, state: &KalmanState) -> (f64, f64) {
        let m = self.h.dot(&state.xhat_minus);
        let v = self.h.dot(&(&state.p_minus * &self.h)) + self.r;
        (m, v)
    }

    /// `S_i = Σ_{k=1}^{i} A^{k−1} Q (A^{k−1})ᵀ`; `S_0 = 0`.
    pub fn noise_sum(&self, i: usize) -> DMatrix<f64> {
        let n = self.n();
        let mut s = DMatrix::zeros(n, n);
        let mut ak = DMatrix::identity(n, n);
        for _ in 0..i {
            s += &ak * &self.q * ak.transpose();
            ak = &self.a * ak;
        }
        linalg::symmetrize(&s)
    }

    /// Mean of `Y_{t+i}` and `Cov[Y_{t+i}, Y_{t+j}]` (`1 <= i <= j`) given the
    /// history, for a filter whose prior is `(x̂_{t+1}⁻, P_{t+1}⁻)`.
    pub fn multi_step(&self, state: &KalmanState, i: usize, j: usize) -> Result<(f64, f64)> {
        self.check_state(state)?;
        if i == 0 || j < i {
            return Err(Error::InvalidArgument(format!(
                "horizons must satisfy 1 <= i <= j, got i = {i}, j = {j}"
            )));
        }
        let ha_i = self.h.transpose() * linalg::mat_pow(&self.a, i - 1);
        let ha_j = self.h.transpose() * linalg::mat_pow(&self.a, j - 1);
        let ha_ji = self.h.transpose() * linalg::mat_pow(&self.a, j - i);
        let mean = (&ha_i * &state.xhat_minus)[0];
        let mut cov = (&ha_j * &state.p_minus * ha_i.transpose())[0];
        if i == j {
            cov += self.r;
        }
        cov += (ha_ji * self.noise_sum(i - 1) * &self.h)[0];
        Ok((mean, cov))
    }

    /// Log-likelihood of a trace under the filter's one-step predictives.
    pub fn loglik(&self, trace: &Trace) -> Result<f64> {
        let mut state = self.initial_state();
        let mut total = 0.0;
        for (t, &y) in trace.ys().iter().enumerate() {
            let (m, v) = self.predictive_moments(&state);
            total += gauss::log_density_scalar(m, v, y).map_err(|_| Error::DegenerateVariance {
                variance: v,
                step: Some(t),
            })?;
            if t + 1 < trace.len() {
                state = self.update(&state, y)?;
            }
        }
        Ok(total)
    }

    /// Simulates the latent chain and its observations.
    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Result<Trace> {
        if len == 0 {
            return Err(Error::InvalidArgument("trace length must be at least 1".into()));
        }
        let init = GaussianDist::new_unchecked(self.x1hat.clone(), self.p1.clone()).sampler()?;
        let zero = DVector::zeros(self.n());
        let step = GaussianDist::new_unchecked(zero, self.q.clone()).sampler()?;
        let obs_sd = self.r.sqrt();
        let mut x = init.draw(rng);
        let mut ys = Vec::with_capacity(len);
        for t in 0..len {
            let e: f64 = rng.sample(StandardNormal);
            ys.push(self.h.dot(&x) + obs_sd * e);
            if t + 1 < len {
                x = &self.a * x + step.draw(rng);
            }
        }
        Trace::new(ys)
    }
}

/// Kalman filter state: the prior for the next step and, after at least one
/// update, the posterior for the current one.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub xhat_minus: DVector<f64>,
    pub p_minus: DMatrix<f64>,
    pub xhat: Option<DVector<f64>>,
    pub p: Option<DMatrix<f64>>,
    /// Observations consumed.
    pub t: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LdsParamsWire {
    n: usize,
    #[serde(rename = "A")]
    a: Vec<f64>,
    #[serde(rename = "H")]
    h: Vec<f64>,
    #[serde(rename = "Q")]
    q: Vec<f64>,
    #[serde(rename = "R")]
    r: f64,
    x1hat: Vec<f64>,
    #[serde(rename = "P1")]
    p1: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

impl TryFrom<LdsParamsWire> for LdsParams {
    type Error = Error;

    fn try_from(w: LdsParamsWire) -> Result<Self> {
        let n = w.n;
        for (name, len) in [("A", w.a.len()), ("Q", w.q.len()), ("P1", w.p1.len())] {
            if len != n * n {
                return Err(Error::InvalidParams(format!("{name} has {len} entries, expected {}", n * n)));
            }
        }
        LdsParams::new(
            DMatrix::from_row_slice(n, n, &w.a),
            DVector::from_vec(w.h),
            DMatrix::from_row_slice(n, n, &w.q),
            w.r,
            DVector::from_vec(w.x1hat),
            DMatrix::from_row_slice(n, n, &w.p1),
        )
    }
}

impl From<LdsParams> for LdsParamsWire {
    fn from(p: LdsParams) -> Self {
        LdsParamsWire {
            n: p.n(),
            a: row_major(&p.a),
            h: p.h.iter().copied().collect(),
            q: row_major(&p.q),
            r: p.r,
            x1hat: p.x1hat.iter().copied().collect(),
            p1: row_major(&p.p1),
        }
    }
}
