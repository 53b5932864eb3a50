//! The conic moment-based ambiguity set for one-step system models and
//! membership tests for candidate step realizations.
//!
//! A set instance pins a nominal affine evolution `f̄(x, u) = Ā x + B̄ u`,
//! nominal noise moments `(μ̄, Σ̄)`, and four uncertainty radii. A candidate
//! one-step realization `(ν, μ, Σ)` belongs to the set when
//!
//! - `‖ν − f̄(z)‖₂² ≤ γ₀(z)`,
//! - `‖μ − μ̄‖²_{Σ̄⁻¹} ≤ γ₁`,
//! - `γ₃ Σ̄ ⪯ Σ + (μ−μ̄)(μ−μ̄)ᵀ ⪯ γ₂ Σ̄`.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{mahalanobis_sq, min_eigenvalue, SpdMatrix, SpectralDecomposition};
use crate::{Error, Result};

/// Eigenvalue slack for the semidefinite comparisons in [`AmbiguitySet::contains`].
pub const PSD_COMPARISON_SLACK: f64 = 1e-9;
/// Relative slack for the scalar constraints, so boundary realizations pass.
pub const SCALAR_SLACK: f64 = 1e-9;

/// A state-control pair `z = (x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateControl {
    pub state: DVector<f64>,
    pub control: DVector<f64>,
}

impl StateControl {
    pub fn new(state: DVector<f64>, control: DVector<f64>) -> Self {
        Self { state, control }
    }

    /// Euclidean norm of the stacked `(x, u)` vector.
    pub fn norm(&self) -> f64 {
        (self.state.norm_squared() + self.control.norm_squared()).sqrt()
    }
}

/// Parametric family for the evolution uncertainty radius `γ₀(z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma0 {
    /// `min{coeff · ‖z‖₂, cap}²`
    NormCapped { coeff: f64, cap: f64 },
    /// Constant radius, independent of `z`.
    Constant { value: f64 },
}

impl Gamma0 {
    pub fn eval(&self, z: &StateControl) -> f64 {
        match *self {
            Gamma0::NormCapped { coeff, cap } => (coeff * z.norm()).min(cap).powi(2),
            Gamma0::Constant { value } => value,
        }
    }

    /// Supremum over all `z`, used as the offline cap `Γ₀`.
    pub fn sup(&self) -> f64 {
        match *self {
            Gamma0::NormCapped { cap, .. } => cap * cap,
            Gamma0::Constant { value } => value,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Gamma0::NormCapped { coeff, cap } => coeff >= 0.0 && cap >= 0.0,
            Gamma0::Constant { value } => value >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "gamma0",
                message: "radius family parameters must be nonnegative".into(),
            })
        }
    }
}

/// One concrete in-set system step: evolution value `ν`, noise mean `μ`,
/// and noise covariance `Σ` (symmetric PSD, possibly singular).
#[derive(Debug, Clone, PartialEq)]
pub struct SdsStepRealization {
    pub evolution: DVector<f64>,
    pub noise_mean: DVector<f64>,
    noise_cov: DMatrix<f64>,
}

impl SdsStepRealization {
    pub fn new(
        evolution: DVector<f64>,
        noise_mean: DVector<f64>,
        noise_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let d = evolution.len();
        if noise_mean.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: noise_mean.len(),
            });
        }
        if noise_cov.nrows() != d || noise_cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: noise_cov.nrows(),
            });
        }
        let max_asymmetry = (&noise_cov - noise_cov.transpose()).amax();
        if max_asymmetry > 1e-9 * noise_cov.amax().max(1.0) {
            return Err(Error::NotSymmetric { max_asymmetry });
        }
        let noise_cov = (&noise_cov + noise_cov.transpose()) * 0.5;
        let min_eig = min_eigenvalue(&noise_cov);
        if min_eig < -PSD_COMPARISON_SLACK {
            return Err(Error::NotPsd {
                min_eigenvalue: min_eig,
            });
        }
        Ok(Self {
            evolution,
            noise_mean,
            noise_cov,
        })
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn dim(&self) -> usize {
        self.evolution.len()
    }
}

/// Which membership constraint a check refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    EvolutionShift,
    NoiseMeanShift,
    SecondMomentUpper,
    SecondMomentLower,
}

/// Outcome of a single membership constraint.
///
/// For the scalar constraints `value` is the measured quantity and `bound`
/// its limit; for the semidefinite ones `value` is the most negative
/// eigenvalue of the slack matrix (so the bound is zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintCheck {
    pub kind: ConstraintKind,
    pub value: f64,
    pub bound: f64,
    pub satisfied: bool,
}

impl ConstraintCheck {
    /// Amount by which the constraint is exceeded; negative when satisfied.
    pub fn margin(&self) -> f64 {
        self.value - self.bound
    }
}

/// Full membership report for one candidate realization.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipReport {
    pub checks: Vec<ConstraintCheck>,
}

impl MembershipReport {
    pub fn is_member(&self) -> bool {
        self.checks.iter().all(|c| c.satisfied)
    }

    pub fn violations(&self) -> impl Iterator<Item = &ConstraintCheck> {
        self.checks.iter().filter(|c| !c.satisfied)
    }
}

/// Conic moment-based ambiguity set with an affine nominal evolution.
#[derive(Debug, Clone)]
pub struct AmbiguitySet {
    a_bar: DMatrix<f64>,
    b_bar: DMatrix<f64>,
    mu_bar: DVector<f64>,
    sigma_bar: SpdMatrix,
    gamma0: Gamma0,
    gamma1: f64,
    gamma2: f64,
    gamma3: f64,
    // Σ̄ is fixed per set, so its eigendecomposition is shared by every step.
    spectral: SpectralDecomposition,
}

impl AmbiguitySet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a_bar: DMatrix<f64>,
        b_bar: DMatrix<f64>,
        mu_bar: DVector<f64>,
        sigma_bar: SpdMatrix,
        gamma0: Gamma0,
        gamma1: f64,
        gamma2: f64,
        gamma3: f64,
    ) -> Result<Self> {
        let d = sigma_bar.dim();
        if a_bar.nrows() != d || a_bar.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: a_bar.nrows(),
            });
        }
        if b_bar.nrows() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: b_bar.nrows(),
            });
        }
        if mu_bar.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: mu_bar.len(),
            });
        }
        gamma0.validate()?;
        if gamma1 < 0.0 {
            return Err(Error::InvalidParameter {
                name: "gamma1",
                message: format!("must be nonnegative, got {gamma1}"),
            });
        }
        if gamma2 <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "gamma2",
                message: format!("must be positive, got {gamma2}"),
            });
        }
        if !(0.0..=gamma2).contains(&gamma3) {
            return Err(Error::InvalidParameter {
                name: "gamma3",
                message: format!("must satisfy 0 <= gamma3 <= gamma2, got {gamma3}"),
            });
        }
        let spectral = sigma_bar.spectral()?;
        Ok(Self {
            a_bar,
            b_bar,
            mu_bar,
            sigma_bar,
            gamma0,
            gamma1,
            gamma2,
            gamma3,
            spectral,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.sigma_bar.dim()
    }

    pub fn control_dim(&self) -> usize {
        self.b_bar.ncols()
    }

    pub fn a_bar(&self) -> &DMatrix<f64> {
        &self.a_bar
    }

    pub fn b_bar(&self) -> &DMatrix<f64> {
        &self.b_bar
    }

    pub fn mu_bar(&self) -> &DVector<f64> {
        &self.mu_bar
    }

    pub fn sigma_bar(&self) -> &SpdMatrix {
        &self.sigma_bar
    }

    pub fn gamma0(&self) -> Gamma0 {
        self.gamma0
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    pub fn gamma2(&self) -> f64 {
        self.gamma2
    }

    pub fn gamma3(&self) -> f64 {
        self.gamma3
    }

    /// Eigendecomposition of `Σ̄`, computed once at construction.
    pub fn sigma_bar_spectral(&self) -> &SpectralDecomposition {
        &self.spectral
    }

    /// Nominal one-step evolution `f̄(z) = Ā x + B̄ u`.
    pub fn nominal_evolution(&self, z: &StateControl) -> Result<DVector<f64>> {
        if z.state.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                got: z.state.len(),
            });
        }
        if z.control.len() != self.control_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.control_dim(),
                got: z.control.len(),
            });
        }
        Ok(&self.a_bar * &z.state + &self.b_bar * &z.control)
    }

    /// Evolution uncertainty radius at `z`.
    pub fn gamma0_eval(&self, z: &StateControl) -> f64 {
        self.gamma0.eval(z)
    }

    /// Offline cap `Γ₀ ≥ sup_z γ₀(z)`.
    pub fn gamma0_sup(&self) -> f64 {
        self.gamma0.sup()
    }

    /// Membership test for a candidate step realization, with a per-constraint
    /// report of values, bounds, and violation margins.
    pub fn contains(&self, z: &StateControl, r: &SdsStepRealization) -> Result<MembershipReport> {
        let d = self.state_dim();
        if r.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: r.dim(),
            });
        }
        let nominal = self.nominal_evolution(z)?;

        let scalar = |kind, value: f64, bound: f64| ConstraintCheck {
            kind,
            value,
            bound,
            satisfied: value <= bound + SCALAR_SLACK * (1.0 + bound.abs()),
        };

        let evo_shift = (&r.evolution - nominal).norm_squared();
        let gamma0_val = self.gamma0_eval(z);
        let evolution = scalar(ConstraintKind::EvolutionShift, evo_shift, gamma0_val);

        let mean_shift = mahalanobis_sq(&r.noise_mean, &self.mu_bar, &self.sigma_bar)?;
        let mean = scalar(ConstraintKind::NoiseMeanShift, mean_shift, self.gamma1);

        let delta = &r.noise_mean - &self.mu_bar;
        let second_moment = r.noise_cov() + &delta * delta.transpose();
        let psd = |kind, slack_matrix: DMatrix<f64>| {
            let min_eig = min_eigenvalue(&slack_matrix);
            ConstraintCheck {
                kind,
                value: (-min_eig).max(0.0),
                bound: 0.0,
                satisfied: min_eig >= -PSD_COMPARISON_SLACK,
            }
        };
        let upper = psd(
            ConstraintKind::SecondMomentUpper,
            self.sigma_bar.matrix() * self.gamma2 - &second_moment,
        );
        let lower = psd(
            ConstraintKind::SecondMomentLower,
            &second_moment - self.sigma_bar.matrix() * self.gamma3,
        );

        Ok(MembershipReport {
            checks: vec![evolution, mean, upper, lower],
        })
    }
}
