//! Small dense linear-algebra helpers shared by the model modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Returns `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest violation of `|m[i][j] - m[j][i]| <= tol * (1 + |m[i][j]|)` as a ratio;
/// values above 1 mean the tolerance is exceeded.
pub fn asymmetry_ratio(m: &DMatrix<f64>, tol: f64) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (m[(i, j)] - m[(j, i)]).abs();
            worst = worst.max(d / (tol * (1.0 + m[(i, j)].abs())));
        }
    }
    worst
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && asymmetry_ratio(m, tol) <= 1.0
}

/// Smallest and largest eigenvalue of the symmetric part of `m`.
pub fn eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    if m.nrows() == 1 {
        return (m[(0, 0)], m[(0, 0)]);
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    (eig.eigenvalues.min(), eig.eigenvalues.max())
}

/// Positive semidefinite up to `tol`: `λ_min >= -tol * (1 + λ_max)`.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    let (lo, hi) = eigen_extremes(m);
    lo >= -tol * (1.0 + hi.max(0.0))
}

/// Checks a covariance-like matrix for symmetry and tolerance PSD.
pub fn check_covariance(m: &DMatrix<f64>, sym_tol: f64, psd_tol: f64) -> Result<(), String> {
    if !m.is_square() {
        return Err(format!("{}x{} matrix is not square", m.nrows(), m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err("non-finite entry".into());
    }
    if !is_symmetric(m, sym_tol) {
        return Err("not symmetric".into());
    }
    if !is_psd(m, psd_tol) {
        let (lo, _) = eigen_extremes(m);
        return Err(format!("smallest eigenvalue {lo:e} is negative"));
    }
    Ok(())
}

/// Result of a minimum-norm least-squares solve.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub x: DVector<f64>,
    /// Number of singular values above `rel_tol * σ_max`.
    pub rank: usize,
    pub singular_values: DVector<f64>,
    /// `‖a x − b‖₂`.
    pub residual: f64,
}

/// Minimum-norm least-squares solution of `a x = b` via the SVD, treating
/// singular values at or below `rel_tol * σ_max` as zero.
pub fn min_norm_lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> LstsqSolution {
    let cols = a.ncols();
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let s = &svd.singular_values;
    let s_max = s.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rel_tol * s_max;
    let mut x = DVector::zeros(cols);
    let mut rank = 0;
    for (k, &sk) in s.iter().enumerate() {
        if sk > cutoff && sk > 0.0 {
            rank += 1;
            let coef = u.column(k).dot(b) / sk;
            x += v_t.row(k).transpose() * coef;
        }
    }
    let residual = (a * &x - b).norm();
    let mut singular_values = s.clone();
    // descending order for reporting
    singular_values
        .as_mut_slice()
        .sort_by(|p, q| q.partial_cmp(p).unwrap_or(std::cmp::Ordering::Equal));
    LstsqSolution {
        x,
        rank,
        singular_values,
        residual,
    }
}

/// `a^k` by repeated multiplication (k is small in every caller).
pub fn mat_pow(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..k {
        out = a * out;
    }
    out
}

/// Spectral radius of a real square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 {
        return a[(0, 0)].abs();
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}
