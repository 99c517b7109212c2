//! Closed-form conversion of a scalar-output LDS into the PLG that predicts
//! the same observation distributions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lds::LdsParams;
use crate::linalg;
use crate::plg::PlgParams;

/// Relative singular-value cutoff used to report the effective rank of `M`.
pub const RANK_TOL: f64 = 1e-10;
/// Tolerance for the symmetry check on `Ψ`.
pub const PSI_SYMMETRY_TOL: f64 = 1e-8;
/// `σ²` below `-SIGMA2_TOL` is an error; between it and zero it is clamped.
pub const SIGMA2_TOL: f64 = 1e-8;

/// Matrices shared by the conversion formulas.
#[derive(Debug, Clone)]
pub struct ConversionIntermediates {
    /// Row `i` (0-based) is `H A^i`.
    pub m: DMatrix<f64>,
    /// Columns are `Ψ_0 … Ψ_{n−1}`.
    pub psi: DMatrix<f64>,
    /// `Ψ_0 … Ψ_n`.
    pub psi_vectors: Vec<DVector<f64>>,
    /// `S_0 … S_n`.
    pub s_list: Vec<DMatrix<f64>>,
}

/// Solution of `gᵀ M = H Aⁿ`.
#[derive(Debug, Clone)]
pub struct TrendSolution {
    pub g: DVector<f64>,
    /// `‖gᵀ M − H Aⁿ‖₂`.
    pub residual: f64,
    /// Singular values of `M` above `RANK_TOL · σ_max`.
    pub rank: usize,
}

/// `H A^k` as a column vector, for `k = 0..=max`.
fn observation_powers(lds: &LdsParams, max: usize) -> Vec<DVector<f64>> {
    let at = lds.a().transpose();
    let mut out = Vec::with_capacity(max + 1);
    let mut row = lds.h().clone();
    for _ in 0..=max {
        out.push(row.clone());
        row = &at * row;
    }
    out
}

/// The `n × n` matrix whose `i`-th row is `H A^{i−1}`.
pub fn build_m(lds: &LdsParams) -> DMatrix<f64> {
    let n = lds.n();
    let rows = observation_powers(lds, n - 1);
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// Builds `M`, `S_0 … S_n`, `Ψ_0 … Ψ_n` and `Ψ`, and checks that `Ψ` is symmetric.
///
/// With 1-based `j`: `(Ψ_i)_j = H A^{i−j+1} S_{j−1} Hᵀ` for `j <= i` and
/// `H A^{j−i−1} S_i Hᵀ` for `j > i`. Column `i+1` of `Ψ` is `Ψ_i`.
pub fn build_psi(lds: &LdsParams) -> Result<ConversionIntermediates> {
    let n = lds.n();
    let hp = observation_powers(lds, n + 1);
    let s_list: Vec<DMatrix<f64>> = (0..=n).map(|k| lds.noise_sum(k)).collect();
    // (H A^p) S_k Hᵀ
    let term = |p: usize, k: usize| hp[p].dot(&(&s_list[k] * lds.h()));
    let psi_vectors: Vec<DVector<f64>> = (0..=n)
        .map(|i| {
            DVector::from_fn(n, |j0, _| {
                let j = j0 + 1;
                if j <= i {
                    term(i + 1 - j, j - 1)
                } else {
                    term(j - i - 1, i)
                }
            })
        })
        .collect();
    let psi = DMatrix::from_fn(n, n, |r, c| psi_vectors[c][r]);
    let ratio = linalg::asymmetry_ratio(&psi, PSI_SYMMETRY_TOL);
    if ratio > 1.0 {
        return Err(Error::AsymmetryDetected(ratio * PSI_SYMMETRY_TOL));
    }
    Ok(ConversionIntermediates {
        m: DMatrix::from_fn(n, n, |i, j| hp[i][j]),
        psi,
        psi_vectors,
        s_list,
    })
}

/// Solves `gᵀ M = H Aⁿ` in the least-squares sense.
///
/// Rows of `M` are scaled to unit norm before the SVD solve; for full-rank `M`
/// the solution is unique so the scaling only improves accuracy when the rows
/// decay geometrically (small spectral radius).
pub fn solve_g(lds: &LdsParams) -> Result<TrendSolution> {
    let n = lds.n();
    let m = build_m(lds);
    let target = observation_powers(lds, n).pop().expect("n + 1 powers");
    let rank = {
        let sv = m.singular_values();
        let smax = sv.max();
        sv.iter().filter(|&&s| s > RANK_TOL * smax && s > 0.0).count()
    };
    let scales: Vec<f64> = (0..n)
        .map(|i| {
            let norm = m.row(i).norm();
            if norm > 0.0 {
                1.0 / norm
            } else {
                1.0
            }
        })
        .collect();
    let scaled_t = DMatrix::from_fn(n, n, |r, c| m[(c, r)] * scales[c]);
    let sol = linalg::min_norm_lstsq(&scaled_t, &target, 1e-14);
    let g = DVector::from_fn(n, |i, _| sol.x[i] * scales[i]);
    let residual = (m.transpose() * &g - &target).norm();
    if residual > 1e-6 * target.norm() {
        return Err(Error::NoSolution { residual, rank });
    }
    Ok(TrendSolution { g, residual, rank })
}

/// The equivalent PLG of an LDS.
///
/// `(μ₀)_i = H A^{i−1} x̂₁⁻`,
/// `(Σ₀)_ij = H A^{j−1} P₁⁻ (H A^{i−1})ᵀ + δ_ij R + H A^{j−i} S_{i−1} Hᵀ` for `j >= i`,
/// `C = Ψ_n − Ψ g − R g`, `σ² = H S_n Hᵀ + R − gᵀ Ψ_n − Cᵀ g`.
pub fn lds_to_plg(lds: &LdsParams) -> Result<PlgParams> {
    let n = lds.n();
    let inter = build_psi(lds)?;
    let trend = solve_g(lds)?;
    let g = trend.g;
    let hp = observation_powers(lds, n);
    let r = lds.r();

    let mu0 = DVector::from_fn(n, |i, _| hp[i].dot(lds.x1hat()));
    let mut sigma0 = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut v = hp[j].dot(&(lds.p1() * &hp[i]));
            if i == j {
                v += r;
            }
            v += hp[j - i].dot(&(&inter.s_list[i] * lds.h()));
            sigma0[(i, j)] = v;
            sigma0[(j, i)] = v;
        }
    }

    let psi_n = &inter.psi_vectors[n];
    let c = psi_n - &inter.psi * &g - &g * r;
    let mut sigma2 = lds.h().dot(&(&inter.s_list[n] * lds.h())) + r - g.dot(psi_n) - c.dot(&g);
    if sigma2 < -SIGMA2_TOL {
        return Err(Error::NegativeSigma2(sigma2));
    }
    if sigma2 < 0.0 {
        sigma2 = 0.0;
    }
    PlgParams::new(mu0, sigma0, g, c, sigma2)
}
