//! Gaussian predictive distributions, the logarithmic score, and
//! chi-square scaling for elliptical confidence regions.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::gamma_lr;

use crate::linalg::{mahalanobis_sq, SpdMatrix};
use crate::{Error, Result};

pub const LN_2PI: f64 = 1.8378770664093453;

/// A Gaussian predictive distribution with strictly PD covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPdf {
    pub mean: DVector<f64>,
    pub covariance: SpdMatrix,
}

impl GaussianPdf {
    pub fn new(mean: DVector<f64>, covariance: SpdMatrix) -> Result<Self> {
        if mean.len() != covariance.dim() {
            return Err(Error::DimensionMismatch {
                expected: covariance.dim(),
                got: mean.len(),
            });
        }
        Ok(Self { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Draw one sample through the Cholesky factor of the covariance.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let chol = self.covariance.cholesky()?;
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        Ok(&self.mean + chol.l_dirty().lower_triangle() * z)
    }
}

/// Logarithmic score of a Gaussian pdf at a realized point:
/// `−½ [d·ln(2π) + ln det Σ̂ + (x−μ̂)ᵀ Σ̂⁻¹ (x−μ̂)]`.
pub fn gaussian_log_density(pdf: &GaussianPdf, x: &DVector<f64>) -> Result<f64> {
    let maha = mahalanobis_sq(x, &pdf.mean, &pdf.covariance)?;
    let ln_det = pdf.covariance.ln_det()?;
    Ok(-0.5 * (pdf.dim() as f64 * LN_2PI + ln_det + maha))
}

/// Chi-square quantile `q` such that the ellipsoid
/// `(x−μ̂)ᵀ Σ̂⁻¹ (x−μ̂) ≤ q` carries Gaussian mass `beta` in dimension `d`.
///
/// `d = 2` uses the closed form `−2 ln(1−beta)`; other dimensions invert the
/// regularized lower incomplete gamma by bisection to 1e-10.
pub fn confidence_scale(beta: f64, d: usize) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidProbability(beta));
    }
    if d == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    if d == 2 {
        return Ok(-2.0 * (1.0 - beta).ln());
    }

    let half_d = d as f64 / 2.0;
    let cdf = |q: f64| gamma_lr(half_d, q / 2.0);

    let mut hi = 1.0;
    while cdf(hi) < beta {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::NoConvergence { iterations: 0 });
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 * (1.0 + hi) {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < beta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
