//! Multivariate Gaussian primitives: conditioning on a leading coordinate,
//! log-density and seeded sampling.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance below which a conditioning variance counts as zero.
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Relative symmetry tolerance for a covariance.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative PSD tolerance for a covariance.
pub const PSD_TOL: f64 = 1e-10;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A Gaussian distribution given by its mean vector and covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianDist {
    /// Builds a distribution, checking dimensions, symmetry and tolerance PSD.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: cov.nrows().max(cov.ncols()),
            });
        }
        linalg::check_covariance(&cov, SYMMETRY_TOL, PSD_TOL).map_err(Error::InvalidCovariance)?;
        Ok(Self { mean, cov })
    }

    /// Builds a distribution without checking the covariance.
    ///
    /// Used for predictive distributions of learned models, which are not
    /// guaranteed to be PSD. Dimensions must still agree.
    pub fn new_unchecked(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        assert_eq!(cov.shape(), (mean.len(), mean.len()), "mean/cov dimensions differ");
        Self { mean, cov }
    }

    pub fn scalar(mean: f64, var: f64) -> Self {
        Self {
            mean: DVector::from_element(1, mean),
            cov: DMatrix::from_element(1, 1, var),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Marginal over the listed coordinates, in the given order.
    pub fn marginal(&self, idx: &[usize]) -> Self {
        let mean = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.mean[i]));
        let cov = DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.cov[(idx[r], idx[c])]);
        Self { mean, cov }
    }

    /// Distribution of coordinates `2..p` given that coordinate 1 equals `y`.
    ///
    /// mean = μ_Z + σ_YZ (y − μ_Y) / σ_YY, cov = Σ_ZZ − σ_YZ σ_YZᵀ / σ_YY.
    pub fn condition_on_first(&self, y: f64) -> Result<Self> {
        let p = self.dim();
        if p < 2 {
            return Err(Error::InvalidArgument(
                "conditioning needs at least two coordinates".into(),
            ));
        }
        let s_yy = self.cov[(0, 0)];
        if !(s_yy > VARIANCE_FLOOR) {
            return Err(Error::DegenerateVariance {
                variance: s_yy,
                step: None,
            });
        }
        let s_yz = self.cov.view((1, 0), (p - 1, 1)).column(0).into_owned();
        let mu_z = self.mean.rows(1, p - 1).into_owned();
        let mean = mu_z + &s_yz * ((y - self.mean[0]) / s_yy);
        let s_zz = self.cov.view((1, 1), (p - 1, p - 1)).into_owned();
        let cov = s_zz - &s_yz * s_yz.transpose() / s_yy;
        Ok(Self {
            mean,
            cov: linalg::symmetrize(&cov),
        })
    }

    /// Natural-log density at `x`, via a Cholesky factorization.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if self.dim() == 1 {
            return log_density_scalar(self.mean[0], self.cov[(0, 0)], x[0]);
        }
        let (lo, hi) = linalg::eigen_extremes(&self.cov);
        if !(lo > VARIANCE_FLOOR * hi) || hi <= 0.0 {
            return Err(Error::SingularCovariance);
        }
        let chol = Cholesky::new(linalg::symmetrize(&self.cov)).ok_or(Error::SingularCovariance)?;
        let l = chol.l_dirty();
        let log_det = 2.0 * (0..self.dim()).map(|i| l[(i, i)].ln()).sum::<f64>();
        let diff = x - &self.mean;
        let w = chol.l().solve_lower_triangular(&diff).ok_or(Error::SingularCovariance)?;
        let maha = w.norm_squared();
        Ok(-0.5 * (self.dim() as f64 * LN_2PI + log_det + maha))
    }

    /// Precomputes the square-root factor used for drawing samples.
    pub fn sampler(&self) -> Result<GaussianSampler> {
        Ok(GaussianSampler {
            mean: self.mean.clone(),
            factor: sqrt_factor(&self.cov)?,
        })
    }

    /// One draw of `mean + L ξ`, `L Lᵀ = cov`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        Ok(self.sampler()?.draw(rng))
    }
}

/// Log-density of `N(mean, var)` at `x`.
pub fn log_density_scalar(mean: f64, var: f64, x: f64) -> Result<f64> {
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::SingularCovariance);
    }
    let d = x - mean;
    Ok(-0.5 * (LN_2PI + var.ln() + d * d / var))
}

/// Draws from a fixed Gaussian with a cached factor.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let xi = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * xi
    }
}

/// `L` with `L Lᵀ = cov`. Cholesky when it succeeds, otherwise an eigen
/// factor with tolerance-negative eigenvalues floored at zero.
fn sqrt_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidCovariance("non-finite entry".into()));
    }
    let sym = linalg::symmetrize(cov);
    if let Some(chol) = Cholesky::new(sym.clone()) {
        return Ok(chol.unpack());
    }
    let eig = SymmetricEigen::new(sym);
    let hi = eig.eigenvalues.max().max(0.0);
    let lo = eig.eigenvalues.min();
    if lo < -PSD_TOL * (1.0 + hi) {
        return Err(Error::InvalidCovariance(format!(
            "smallest eigenvalue {lo:e} is negative"
        )));
    }
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals))
}
