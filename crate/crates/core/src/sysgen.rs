//! Random stable test systems.
//!
//! Entries of `H`, `A` and `x̂₁⁻` are `U(−1, 1)`; `A` is rescaled to a spectral
//! radius `λ ~ U(0, 1)`. `Q` and `P₁⁻` are `D K D` for a random correlation
//! matrix `K` and a diagonal `D` with entries `2^x`, `x ~ U(−1, 1)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lds::LdsParams;
use crate::linalg;

const MAX_REDRAWS: usize = 100;
const MIN_RADIUS: f64 = 1e-10;

/// How the observation noise `R` is drawn from `x ~ U(−1, 1)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RMode {
    /// `R = 2^x`, the same law as one diagonal scale entry.
    Literal,
    /// `R = 2^{2x}`, the same law as one diagonal entry of `Q`.
    #[default]
    Variance,
}

impl FromStr for RMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "literal" => Ok(RMode::Literal),
            "variance" => Ok(RMode::Variance),
            other => Err(format!("unknown r-mode `{other}` (expected literal or variance)")),
        }
    }
}

impl fmt::Display for RMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RMode::Literal => "literal",
            RMode::Variance => "variance",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenConfig {
    pub n: usize,
    pub seed: u64,
    pub r_mode: RMode,
}

impl GenConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            r_mode: RMode::default(),
        }
    }
}

/// Gram matrix of `n` independent uniform directions on the unit sphere in
/// `n + 1` dimensions. Symmetric PSD with unit diagonal.
pub fn random_correlation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let dirs: Vec<DVector<f64>> = (0..n)
        .map(|_| loop {
            let v = DVector::from_fn(n + 1, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = v.norm();
            if norm > 0.0 {
                break v / norm;
            }
        })
        .collect();
    let mut k = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let c = dirs[i].dot(&dirs[j]).clamp(-1.0, 1.0);
            k[(i, j)] = c;
            k[(j, i)] = c;
        }
    }
    k
}

fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(-1.0..1.0)
}

fn scaled_covariance<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let corr = random_correlation(n, rng);
    let scale: Vec<f64> = (0..n).map(|_| 2f64.powf(uniform(rng))).collect();
    DMatrix::from_fn(n, n, |i, j| (scale[i] * scale[j]) * corr[(i, j)])
}

/// A random LDS together with the radius it was normalized to.
#[derive(Debug, Clone)]
pub struct GeneratedSystem {
    pub lds: LdsParams,
    pub lambda: f64,
}

pub fn random_lds(cfg: &GenConfig) -> Result<LdsParams> {
    random_lds_detailed(cfg).map(|s| s.lds)
}

pub fn random_lds_detailed(cfg: &GenConfig) -> Result<GeneratedSystem> {
    let n = cfg.n;
    if n == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h = DVector::from_fn(n, |_, _| uniform(&mut rng));
    let x1hat = DVector::from_fn(n, |_, _| uniform(&mut rng));

    let mut raw = None;
    for _ in 0..MAX_REDRAWS {
        let a = DMatrix::from_fn(n, n, |_, _| uniform(&mut rng));
        let rho = linalg::spectral_radius(&a);
        if rho > MIN_RADIUS && rho.is_finite() {
            raw = Some((a, rho));
            break;
        }
    }
    let (a, rho) = raw.ok_or_else(|| {
        Error::Generation(format!("no A with nonzero spectral radius in {MAX_REDRAWS} draws"))
    })?;
    let lambda = loop {
        let l: f64 = rng.random_range(0.0..1.0);
        if l > 0.0 {
            break l;
        }
    };
    let a = a * (lambda / rho);

    let q = scaled_covariance(n, &mut rng);
    let p1 = scaled_covariance(n, &mut rng);
    let x = uniform(&mut rng);
    let r = match cfg.r_mode {
        RMode::Literal => 2f64.powf(x),
        RMode::Variance => 2f64.powf(2.0 * x),
    };
    let lds = LdsParams::new(a, h, q, r, x1hat, p1)?;
    Ok(GeneratedSystem { lds, lambda })
}
