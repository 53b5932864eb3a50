//! Worst-case in-set step constructions, offline value-function bounds, and
//! rules for judging whether an ambiguity set is sized sensibly.
//!
//! The adversaries here instantiate worst-case noise laws as Gaussians with
//! the prescribed first two moments; a Gaussian predictive pdf's expected log
//! score only depends on those moments, so nothing is lost.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ambiguity::{AmbiguitySet, SdsStepRealization, StateControl};
use crate::linalg::{mahalanobis_sq, min_eigenvalue, SpdMatrix};
use crate::predictors::{noise_drpp_value, worst_direction_index};
use crate::{Error, Result};

/// How [`noise_worst_step`] picks the (free) worst-case noise mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WorstMeanMode {
    /// Keep the nominal mean `μ̄`.
    #[default]
    Nominal,
    /// Sample uniformly on the boundary of the feasible mean ellipsoid.
    UniformBoundary,
}

/// Worst-case noise covariance for a fixed feasible mean:
/// `Σ* = γ₂ Σ̄ − (μ−μ̄)(μ−μ̄)ᵀ`.
pub fn worst_sigma(set: &AmbiguitySet, mu: &DVector<f64>) -> Result<DMatrix<f64>> {
    let norm_sq = mahalanobis_sq(mu, set.mu_bar(), set.sigma_bar())?;
    if norm_sq > set.gamma1() * (1.0 + 1e-9) + 1e-12 {
        return Err(Error::InfeasibleMean {
            norm_sq,
            gamma1: set.gamma1(),
        });
    }
    let delta = mu - set.mu_bar();
    let sigma = set.sigma_bar().matrix() * set.gamma2() - &delta * delta.transpose();
    let min_eig = min_eigenvalue(&sigma);
    if min_eig < -1e-10 {
        return Err(Error::NotPsdResult {
            min_eigenvalue: min_eig,
        });
    }
    Ok(sigma)
}

/// Worst-case step against Noise-DRPP: nominal evolution, a feasible mean,
/// and a covariance that pushes the second moment about `μ̄` to exactly
/// `γ₂ Σ̄`.
pub fn noise_worst_step<R: Rng + ?Sized>(
    set: &AmbiguitySet,
    z: &StateControl,
    rng: &mut R,
    mode: WorstMeanMode,
) -> Result<SdsStepRealization> {
    let mu = match mode {
        WorstMeanMode::Nominal => set.mu_bar().clone(),
        WorstMeanMode::UniformBoundary => {
            let d = set.state_dim();
            let mut dir = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = dir.norm();
            if norm == 0.0 {
                dir = DVector::from_element(d, 1.0 / (d as f64).sqrt());
            } else {
                dir /= norm;
            }
            let l = set.sigma_bar().cholesky()?.l_dirty().lower_triangle();
            set.mu_bar() + l * dir * set.gamma1().sqrt()
        }
    };
    let sigma = worst_sigma(set, &mu)?;
    SdsStepRealization::new(set.nominal_evolution(z)?, mu, sigma)
}

/// Worst-case step against an arbitrary predictive covariance.
///
/// The predictive covariance is projected onto the eigenbasis of `Σ̄`
/// (`λ̂ᵢ = vᵢᵀ Σ̂ vᵢ`), the most damaging direction
/// `j* = argmax (2√(γ₀ γ₁ λᵢ) + γ₀)/λ̂ᵢ` is chosen, and the step shifts the
/// evolution and noise mean along `v_{j*}` while deflating the covariance to
/// stay on the second-moment boundary.
pub fn eig_worst_step(
    set: &AmbiguitySet,
    z: &StateControl,
    predictive_cov: &SpdMatrix,
) -> Result<SdsStepRealization> {
    let d = set.state_dim();
    if predictive_cov.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: predictive_cov.dim(),
        });
    }
    if set.gamma1() >= set.gamma2() {
        return Err(Error::NotPsdResult {
            min_eigenvalue: set.gamma2() - set.gamma1(),
        });
    }
    let dec = set.sigma_bar_spectral();
    let gamma0_val = set.gamma0_eval(z);
    let gamma1 = set.gamma1();

    let projected: Vec<f64> = (0..d)
        .map(|i| {
            let v = dec.eigenvectors.column(i);
            (predictive_cov.matrix() * v).dot(&v.into_owned())
        })
        .collect();
    let weights: Vec<f64> = dec
        .eigenvalues
        .iter()
        .map(|l| 2.0 * (gamma0_val * gamma1 * l).sqrt() + gamma0_val)
        .collect();
    let j = worst_direction_index(&weights, &projected);

    let v_j = dec.eigenvector(j);
    let lambda_j = dec.eigenvalues[j];
    let evolution = set.nominal_evolution(z)? + &v_j * gamma0_val.sqrt();
    let mean = set.mu_bar() + &v_j * (gamma1 * lambda_j).sqrt();
    let sigma =
        set.sigma_bar().matrix() * set.gamma2() - (&v_j * v_j.transpose()) * (gamma1 * lambda_j);
    SdsStepRealization::new(evolution, mean, sigma)
}

/// Per-step terms of the offline upper bound on the optimal worst-case value
/// function; each term is the Noise-DRPP one-step value of its set.
pub fn upper_bound(sets: &[AmbiguitySet]) -> Result<Vec<f64>> {
    sets.iter().map(noise_drpp_value).collect()
}

/// Per-step terms of the offline lower bound, evaluated at the evolution
/// radius caps `Γ₀,k` (callers must supply `Γ₀,k ≥ sup_z γ₀,k(z)` for the
/// bound to be valid).
pub fn lower_bound(sets: &[AmbiguitySet], gamma0_caps: &[f64]) -> Result<Vec<f64>> {
    if sets.len() != gamma0_caps.len() {
        return Err(Error::DimensionMismatch {
            expected: sets.len(),
            got: gamma0_caps.len(),
        });
    }
    sets.iter()
        .zip(gamma0_caps)
        .map(|(set, cap)| crate::predictors::eig_drpp_value(set, *cap))
        .collect()
}

/// Offline optimality-gap bound: upper total minus lower total.
pub fn gap_bound(sets: &[AmbiguitySet], gamma0_caps: &[f64]) -> Result<f64> {
    let report = bounds_report(sets, gamma0_caps)?;
    Ok(report.gap)
}

/// Offline value bounds over a horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub upper: f64,
    pub lower: f64,
    pub gap: f64,
    pub per_step_upper: Vec<f64>,
    pub per_step_lower: Vec<f64>,
    pub horizon: usize,
    pub gamma0_caps: Vec<f64>,
}

/// Assemble the full [`BoundsReport`] for a horizon of ambiguity sets.
pub fn bounds_report(sets: &[AmbiguitySet], gamma0_caps: &[f64]) -> Result<BoundsReport> {
    if sets.is_empty() {
        return Err(Error::EmptyInput);
    }
    let per_step_upper = upper_bound(sets)?;
    let per_step_lower = lower_bound(sets, gamma0_caps)?;
    let upper: f64 = per_step_upper.iter().sum();
    let lower: f64 = per_step_lower.iter().sum();
    Ok(BoundsReport {
        upper,
        lower,
        gap: upper - lower,
        per_step_upper,
        per_step_lower,
        horizon: sets.len(),
        gamma0_caps: gamma0_caps.to_vec(),
    })
}

/// Verdict of the ambiguity-set size diagnosis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Realized scores always beat the upper bound: shrink the set.
    TooLarge,
    /// Realized scores always trail the lower bound: grow the set.
    TooSmall,
    Consistent,
}

/// Diagnosis outcome with the supporting step counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmbiguityVerdict {
    pub verdict: Verdict,
    /// Steps where the cumulative mean score exceeded the cumulative upper bound.
    pub steps_above_upper: usize,
    /// Steps where the cumulative mean score fell below the cumulative lower bound.
    pub steps_below_lower: usize,
    pub horizon: usize,
}

/// Compare realized mean step scores against the offline bounds,
/// cumulatively at every step.
///
/// `required_fraction` is the share of steps that must cross a bound before
/// the verdict fires; 1.0 demands the crossing at every step.
pub fn diagnose_ambiguity(
    step_mean_scores: &[f64],
    per_step_upper: &[f64],
    per_step_lower: &[f64],
    required_fraction: f64,
) -> Result<AmbiguityVerdict> {
    let t = step_mean_scores.len();
    if t == 0 {
        return Err(Error::EmptyInput);
    }
    if per_step_upper.len() != t || per_step_lower.len() != t {
        return Err(Error::DimensionMismatch {
            expected: t,
            got: per_step_upper.len().min(per_step_lower.len()),
        });
    }
    if !(0.0..=1.0).contains(&required_fraction) {
        return Err(Error::InvalidParameter {
            name: "required_fraction",
            message: format!("must lie in [0, 1], got {required_fraction}"),
        });
    }

    let mut cum_score = 0.0;
    let mut cum_upper = 0.0;
    let mut cum_lower = 0.0;
    let mut above = 0usize;
    let mut below = 0usize;
    for k in 0..t {
        cum_score += step_mean_scores[k];
        cum_upper += per_step_upper[k];
        cum_lower += per_step_lower[k];
        if cum_score > cum_upper {
            above += 1;
        }
        if cum_score < cum_lower {
            below += 1;
        }
    }

    let needed = (required_fraction * t as f64).ceil().max(1.0) as usize;
    let verdict = if above >= needed {
        Verdict::TooLarge
    } else if below >= needed {
        Verdict::TooSmall
    } else {
        Verdict::Consistent
    };
    Ok(AmbiguityVerdict {
        verdict,
        steps_above_upper: above,
        steps_below_lower: below,
        horizon: t,
    })
}
