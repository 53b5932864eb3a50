//! The four probabilistic predictors: nominal, Noise-DRPP, Eig-DRPP, and the
//! ground-truth oracle. Each maps a state-control pair to a Gaussian pdf.
//!
//! Noise-DRPP is the closed-form optimum when the one-step evolution is
//! exactly known: it centers on the nominal prediction and inflates the
//! covariance to `γ₂ Σ̄`. Eig-DRPP additionally hedges against evolution
//! uncertainty while keeping the predictive covariance in the eigenbasis of
//! `Σ̄`; its eigenvalues come from the convex program P3 solved in
//! [`p3_solve`].

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::ambiguity::{AmbiguitySet, SdsStepRealization, StateControl};
use crate::gaussian::{GaussianPdf, LN_2PI};
use crate::linalg::SpdMatrix;
use crate::{Error, Result};

/// Objectives within this of each other are ties; the smallest index wins.
const J_STAR_TIE_TOL: f64 = 1e-12;

/// Identifies a predictor in configurations, records, and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Nominal,
    NoiseDrpp,
    EigDrpp,
    #[serde(rename = "oracle")]
    OptimalOracle,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 4] = [
        PredictorKind::Nominal,
        PredictorKind::NoiseDrpp,
        PredictorKind::EigDrpp,
        PredictorKind::OptimalOracle,
    ];

    /// Stable lowercase name used in CSV headers and JSON keys.
    pub fn name(&self) -> &'static str {
        match self {
            PredictorKind::Nominal => "nominal",
            PredictorKind::NoiseDrpp => "noise_drpp",
            PredictorKind::EigDrpp => "eig_drpp",
            PredictorKind::OptimalOracle => "oracle",
        }
    }
}

impl std::fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Solution of the convex program P3: predictive eigenvalues, the worst-case
/// direction index, and the minimized objective
/// `Σᵢ [ln λ̂ᵢ + γ₂ λᵢ / λ̂ᵢ] + c_{j*} / λ̂_{j*}`.
#[derive(Debug, Clone, PartialEq)]
pub struct P3Solution {
    pub lambdas_hat: DVector<f64>,
    pub j_star: usize,
    pub objective: f64,
}

/// KKT diagnostics for a [`P3Solution`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub complementary_slackness: f64,
    /// Most negative constraint multiplier (dual feasibility wants `>= 0`).
    pub min_multiplier: f64,
    /// Largest violation of `λ̂_j ≤ (c_j/c_i) λ̂_i`.
    pub max_primal_violation: f64,
}

/// Predicts the nominal model as-is: `N(f̄(z) + μ̄, Σ̄)`.
pub fn nominal_predict(set: &AmbiguitySet, z: &StateControl) -> Result<GaussianPdf> {
    let mean = set.nominal_evolution(z)? + set.mu_bar();
    GaussianPdf::new(mean, set.sigma_bar().clone())
}

/// Worst-case optimal predictor when the evolution function is exact:
/// `N(f̄(z) + μ̄, γ₂ Σ̄)`.
pub fn noise_drpp_predict(set: &AmbiguitySet, z: &StateControl) -> Result<GaussianPdf> {
    let mean = set.nominal_evolution(z)? + set.mu_bar();
    GaussianPdf::new(mean, set.sigma_bar().scaled(set.gamma2())?)
}

/// One-step worst-case expected score of Noise-DRPP:
/// `−½ [d ln(2π) + d + ln det(γ₂ Σ̄)]`. Independent of `z`.
pub fn noise_drpp_value(set: &AmbiguitySet) -> Result<f64> {
    let d = set.state_dim() as f64;
    let ln_det = set
        .sigma_bar_spectral()
        .eigenvalues
        .iter()
        .map(|l| (set.gamma2() * l).ln())
        .sum::<f64>();
    Ok(-0.5 * (d * LN_2PI + d + ln_det))
}

/// Maximizer of `‖a+b‖²_{Σ̂⁻¹} − ‖a‖²_{Σ̂⁻¹}` over the ellipsoid
/// `‖a‖²_{Σ̄⁻¹} ≤ γ₁`:  `a* = √γ₁ · Σ̄ Σ̂⁻¹ b / ‖Σ̄ Σ̂⁻¹ b‖_{Σ̄⁻¹}`.
///
/// For `b = 0` the objective is constant in `a`, so the conventional answer
/// is `a* = 0`; likewise for `γ₁ = 0`.
pub fn qclp_mean_shift(
    b: &DVector<f64>,
    sigma_bar: &SpdMatrix,
    sigma_hat: &SpdMatrix,
    gamma1: f64,
) -> Result<DVector<f64>> {
    let d = sigma_bar.dim();
    if b.len() != d || sigma_hat.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: b.len().max(sigma_hat.dim()),
        });
    }
    if gamma1 < 0.0 {
        return Err(Error::InvalidParameter {
            name: "gamma1",
            message: format!("must be nonnegative, got {gamma1}"),
        });
    }
    if gamma1 == 0.0 || b.norm() == 0.0 {
        return Ok(DVector::zeros(d));
    }
    let y = sigma_hat.cholesky()?.solve(b);
    let w = sigma_bar.matrix() * &y;
    // ‖Σ̄ Σ̂⁻¹ b‖²_{Σ̄⁻¹} = wᵀ Σ̄⁻¹ w = wᵀ y
    let norm_sq = w.dot(&y);
    if norm_sq <= 0.0 {
        return Err(Error::SingularMatrix);
    }
    Ok(w * (gamma1.sqrt() / norm_sq.sqrt()))
}

/// Evolution-direction weights `cᵢ = 2 √(γ₀ γ₁ λᵢ) + γ₀`.
fn direction_weights(lambdas: &[f64], gamma0_val: f64, gamma1: f64) -> Vec<f64> {
    lambdas
        .iter()
        .map(|l| 2.0 * (gamma0_val * gamma1 * l).sqrt() + gamma0_val)
        .collect()
}

/// Argmax of `cᵢ / λ̂ᵢ` with ties (relative 1e-12) broken toward the
/// smallest index.
pub fn worst_direction_index(weights: &[f64], lambdas_hat: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_ratio = weights[0] / lambdas_hat[0];
    for i in 1..weights.len() {
        let ratio = weights[i] / lambdas_hat[i];
        if ratio > best_ratio * (1.0 + J_STAR_TIE_TOL) + J_STAR_TIE_TOL {
            best = i;
            best_ratio = ratio;
        }
    }
    best
}

/// Solves P3: minimize
/// `Σᵢ [ln λ̂ᵢ + γ₂ λᵢ / λ̂ᵢ] + c_j / λ̂_j` over `λ̂ ≻ 0` and the index `j`,
/// subject to `λ̂_j ≤ (c_j / cᵢ) λ̂ᵢ` for all `i`.
///
/// For each fixed `j` the subproblem is convex and the binding constraint set
/// has a closed-form active-set solution: with `u = γ₂ λ_j + c_j` and
/// `βᵢ = γ₂ λᵢ c_j / cᵢ`, the stationary `t = λ̂_j` is the average of `u`
/// and the βᵢ it has absorbed, so sorting β ascending and absorbing until
/// `t ≤ β_{next}` solves the KKT system exactly. The outer loop takes the
/// best `j` (smallest index wins ties within 1e-12).
///
/// When `γ₀ = 0` every direction weight vanishes and the program decouples to
/// `λ̂ᵢ = γ₂ λᵢ`.
pub fn p3_solve(lambdas: &[f64], gamma0_val: f64, gamma1: f64, gamma2: f64) -> Result<P3Solution> {
    if lambdas.is_empty() {
        return Err(Error::EmptyInput);
    }
    for &l in lambdas {
        if l <= 0.0 || l.is_nan() {
            return Err(Error::NonPositiveEigenvalue(l));
        }
    }
    if gamma0_val < 0.0 || gamma1 < 0.0 || gamma2 <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "gamma",
            message: format!(
                "need gamma0 >= 0, gamma1 >= 0, gamma2 > 0; got ({gamma0_val}, {gamma1}, {gamma2})"
            ),
        });
    }
    let d = lambdas.len();

    if gamma0_val == 0.0 {
        let lambdas_hat = DVector::from_iterator(d, lambdas.iter().map(|l| gamma2 * l));
        let objective = lambdas_hat.iter().map(|lh| lh.ln() + 1.0).sum::<f64>();
        return Ok(P3Solution {
            lambdas_hat,
            j_star: 0,
            objective,
        });
    }

    let c = direction_weights(lambdas, gamma0_val, gamma1);
    let mut best: Option<P3Solution> = None;
    for j in 0..d {
        let (lambdas_hat, objective) = solve_fixed_direction(lambdas, &c, gamma2, j);
        let better = match &best {
            None => true,
            Some(b) => objective < b.objective - J_STAR_TIE_TOL,
        };
        if better {
            best = Some(P3Solution {
                lambdas_hat,
                j_star: j,
                objective,
            });
        }
    }
    Ok(best.expect("d >= 1"))
}

fn solve_fixed_direction(lambdas: &[f64], c: &[f64], gamma2: f64, j: usize) -> (DVector<f64>, f64) {
    let d = lambdas.len();
    let u = gamma2 * lambdas[j] + c[j];

    // βᵢ is the value of the i-th bound when λ̂ᵢ sits at its unconstrained
    // minimizer γ₂ λᵢ; absorbing a bound raises λ̂ᵢ onto the constraint.
    let mut betas: Vec<(usize, f64)> = (0..d)
        .filter(|&i| i != j)
        .map(|i| (i, gamma2 * lambdas[i] * c[j] / c[i]))
        .collect();
    betas.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite bounds"));

    let mut absorbed_sum = 0.0;
    let mut t = u;
    let mut active = 0usize;
    for m in 0..=betas.len() {
        t = (u + absorbed_sum) / (1.0 + m as f64);
        if m == betas.len() || t <= betas[m].1 {
            active = m;
            break;
        }
        absorbed_sum += betas[m].1;
    }

    let mut lambdas_hat = DVector::zeros(d);
    lambdas_hat[j] = t;
    for (rank, &(i, _)) in betas.iter().enumerate() {
        lambdas_hat[i] = if rank < active {
            c[i] / c[j] * t
        } else {
            gamma2 * lambdas[i]
        };
    }

    let objective = (0..d)
        .map(|i| lambdas_hat[i].ln() + gamma2 * lambdas[i] / lambdas_hat[i])
        .sum::<f64>()
        + c[j] / t;
    (lambdas_hat, objective)
}

/// KKT residuals of a P3 solution (all should be at machine-precision level).
pub fn p3_kkt_residuals(
    sol: &P3Solution,
    lambdas: &[f64],
    gamma0_val: f64,
    gamma1: f64,
    gamma2: f64,
) -> KktResiduals {
    let d = lambdas.len();
    let lh = &sol.lambdas_hat;
    if gamma0_val == 0.0 {
        let stationarity = (0..d)
            .map(|i| (1.0 / lh[i] - gamma2 * lambdas[i] / (lh[i] * lh[i])).abs())
            .fold(0.0, f64::max);
        return KktResiduals {
            stationarity,
            complementary_slackness: 0.0,
            min_multiplier: 0.0,
            max_primal_violation: 0.0,
        };
    }
    let c = direction_weights(lambdas, gamma0_val, gamma1);
    let j = sol.j_star;

    let mut multiplier_sum = 0.0;
    let mut comp_slack: f64 = 0.0;
    let mut min_multiplier = f64::INFINITY;
    let mut max_primal_violation = f64::NEG_INFINITY;
    for i in 0..d {
        if i == j {
            continue;
        }
        let eta = c[i] / c[j] * (1.0 / lh[i] - gamma2 * lambdas[i] / (lh[i] * lh[i]));
        multiplier_sum += eta;
        let slack = lh[j] - c[j] / c[i] * lh[i];
        comp_slack = comp_slack.max((eta * slack).abs());
        min_multiplier = min_multiplier.min(eta);
        max_primal_violation = max_primal_violation.max(slack);
    }
    if d == 1 {
        min_multiplier = 0.0;
        max_primal_violation = 0.0;
    }
    let stationarity =
        (1.0 / lh[j] - (gamma2 * lambdas[j] + c[j]) / (lh[j] * lh[j]) + multiplier_sum).abs();
    KktResiduals {
        stationarity,
        complementary_slackness: comp_slack,
        min_multiplier,
        max_primal_violation,
    }
}

/// Eig-DRPP: worst-case optimal predictor whose covariance shares the
/// eigenbasis of `Σ̄`. Returns the pdf together with the P3 solution so the
/// adversary and diagnostics can reuse it.
pub fn eig_drpp_predict(set: &AmbiguitySet, z: &StateControl) -> Result<(GaussianPdf, P3Solution)> {
    let dec = set.sigma_bar_spectral();
    let sol = p3_solve(
        dec.eigenvalues.as_slice(),
        set.gamma0_eval(z),
        set.gamma1(),
        set.gamma2(),
    )?;
    let cov = dec.reconstruct_with(&sol.lambdas_hat);
    let mean = set.nominal_evolution(z)? + set.mu_bar();
    let pdf = GaussianPdf::new(mean, SpdMatrix::new(cov)?)?;
    Ok((pdf, sol))
}

/// One-step worst-case expected score of Eig-DRPP at a given evolution
/// radius: `−½ [d ln(2π) + objective(P3)]`.
pub fn eig_drpp_value(set: &AmbiguitySet, gamma0_val: f64) -> Result<f64> {
    let dec = set.sigma_bar_spectral();
    let sol = p3_solve(
        dec.eigenvalues.as_slice(),
        gamma0_val,
        set.gamma1(),
        set.gamma2(),
    )?;
    Ok(-0.5 * (set.state_dim() as f64 * LN_2PI + sol.objective))
}

/// Ground-truth oracle: predicts the realized step's own Gaussian,
/// `N(ν + μ, Σ)`.
pub fn oracle_predict(truth: &SdsStepRealization, _z: &StateControl) -> Result<GaussianPdf> {
    let cov = SpdMatrix::new(truth.noise_cov().clone()).map_err(|_| Error::SingularMatrix)?;
    GaussianPdf::new(&truth.evolution + &truth.noise_mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambiguity::Gamma0;
    use crate::gaussian::gaussian_log_density;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn preset_set() -> AmbiguitySet {
        AmbiguitySet::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            SpdMatrix::from_rows(&[&[1.0, 0.5], &[0.5, 1.5]]).unwrap(),
            Gamma0::NormCapped {
                coeff: 0.3,
                cap: 5.0,
            },
            0.5,
            3.0,
            0.0,
        )
        .unwrap()
    }

    fn z_start() -> StateControl {
        StateControl::new(DVector::from_vec(vec![2.0, 1.0]), DVector::zeros(2))
    }

    const NOISE_VALUE_2D: f64 = -4.04806113073456;

    #[test]
    fn nominal_examples() {
        let set = preset_set();
        let p = nominal_predict(&set, &z_start()).unwrap();
        assert_relative_eq!(p.mean, DVector::from_vec(vec![2.1, 1.0]), epsilon = 1e-12);
        assert_eq!(p.covariance, *set.sigma_bar());

        let p0 = nominal_predict(
            &set,
            &StateControl::new(DVector::zeros(2), DVector::zeros(2)),
        )
        .unwrap();
        assert_eq!(p0.mean, DVector::zeros(2));
        // covariance never depends on z
        assert_eq!(p0.covariance, p.covariance);
    }

    #[test]
    fn noise_predictor_inflates_by_gamma2() {
        let set = preset_set();
        let p = noise_drpp_predict(&set, &z_start()).unwrap();
        let expected = SpdMatrix::from_rows(&[&[3.0, 1.5], &[1.5, 4.5]]).unwrap();
        assert_relative_eq!(p.covariance.matrix(), expected.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn noise_predictor_gamma2_one_is_nominal() {
        let set = AmbiguitySet::new(
            preset_set().a_bar().clone(),
            preset_set().b_bar().clone(),
            DVector::zeros(2),
            preset_set().sigma_bar().clone(),
            Gamma0::Constant { value: 0.0 },
            0.5,
            1.0,
            0.0,
        )
        .unwrap();
        let z = z_start();
        assert_eq!(
            noise_drpp_predict(&set, &z).unwrap(),
            nominal_predict(&set, &z).unwrap()
        );
    }

    #[test]
    fn noise_predictor_scalar_case() {
        let set = AmbiguitySet::new(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            SpdMatrix::scalar(2.0).unwrap(),
            Gamma0::Constant { value: 0.0 },
            0.5,
            3.0,
            0.0,
        )
        .unwrap();
        let z = StateControl::new(DVector::from_vec(vec![1.0]), DVector::zeros(1));
        let p = noise_drpp_predict(&set, &z).unwrap();
        assert_relative_eq!(p.covariance.matrix()[(0, 0)], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn noise_value_matches_closed_form() {
        let set = preset_set();
        assert_relative_eq!(
            noise_drpp_value(&set).unwrap(),
            NOISE_VALUE_2D,
            epsilon = 1e-9
        );
    }

    #[test]
    fn noise_value_standard_normal() {
        // γ₂ Σ̄ = 1 in one dimension: negated entropy of the standard normal
        let set = AmbiguitySet::new(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            SpdMatrix::scalar(0.5).unwrap(),
            Gamma0::Constant { value: 0.0 },
            0.0,
            2.0,
            0.0,
        )
        .unwrap();
        assert_relative_eq!(
            noise_drpp_value(&set).unwrap(),
            -0.5 * (LN_2PI + 1.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn noise_value_gamma2_doubling() {
        let set = preset_set();
        let doubled = AmbiguitySet::new(
            set.a_bar().clone(),
            set.b_bar().clone(),
            set.mu_bar().clone(),
            set.sigma_bar().clone(),
            set.gamma0(),
            set.gamma1(),
            2.0 * set.gamma2(),
            set.gamma3(),
        )
        .unwrap();
        let delta = noise_drpp_value(&set).unwrap() - noise_drpp_value(&doubled).unwrap();
        assert_relative_eq!(delta, 2.0 * 0.5 * 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn qclp_identity_case() {
        let id = SpdMatrix::new(DMatrix::identity(2, 2)).unwrap();
        let b = DVector::from_vec(vec![3.0, 4.0]);
        let a = qclp_mean_shift(&b, &id, &id, 0.25).unwrap();
        assert_relative_eq!(a, DVector::from_vec(vec![0.3, 0.4]), epsilon = 1e-12);
    }

    #[test]
    fn qclp_degenerate_inputs() {
        let id = SpdMatrix::new(DMatrix::identity(2, 2)).unwrap();
        let b = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(
            qclp_mean_shift(&b, &id, &id, 0.0).unwrap(),
            DVector::zeros(2)
        );
        assert_eq!(
            qclp_mean_shift(&DVector::zeros(2), &id, &id, 0.5).unwrap(),
            DVector::zeros(2)
        );
    }

    fn qclp_objective(a: &DVector<f64>, b: &DVector<f64>, sigma_hat: &SpdMatrix) -> f64 {
        let chol = sigma_hat.cholesky().unwrap();
        let apb = a + b;
        apb.dot(&chol.solve(&apb)) - a.dot(&chol.solve(a))
    }

    #[test]
    fn qclp_beats_boundary_grid_and_random_points() {
        let sigma_bar = SpdMatrix::from_rows(&[&[1.0, 0.5], &[0.5, 1.5]]).unwrap();
        let sigma_hat = sigma_bar.scaled(3.0).unwrap();
        let gamma1 = 0.5;
        let b = DVector::from_vec(vec![1.0, 0.0]);
        let a_star = qclp_mean_shift(&b, &sigma_bar, &sigma_hat, gamma1).unwrap();

        let constraint =
            crate::linalg::mahalanobis_sq(&a_star, &DVector::zeros(2), &sigma_bar).unwrap();
        assert_relative_eq!(constraint, gamma1, epsilon = 1e-10);

        let best = qclp_objective(&a_star, &b, &sigma_hat);
        let l = sigma_bar.cholesky().unwrap().l_dirty().lower_triangle();

        // fine boundary grid
        for i in 0..3600 {
            let theta = i as f64 * std::f64::consts::TAU / 3600.0;
            let unit = DVector::from_vec(vec![theta.cos(), theta.sin()]);
            let a = &l * unit * gamma1.sqrt();
            assert!(qclp_objective(&a, &b, &sigma_hat) <= best + 1e-9);
        }
        // random feasible points
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for _ in 0..20_000 {
            let u = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            if u.norm() > 1.0 {
                continue;
            }
            let a = &l * u * gamma1.sqrt();
            assert!(qclp_objective(&a, &b, &sigma_hat) <= best + 1e-9);
        }
    }

    #[test]
    fn p3_zero_radius_closed_form() {
        let lambdas = [1.8090169943749475, 0.6909830056250525];
        let sol = p3_solve(&lambdas, 0.0, 0.5, 3.0).unwrap();
        assert_relative_eq!(sol.lambdas_hat[0], 5.427050983124843, epsilon = 1e-10);
        assert_relative_eq!(sol.lambdas_hat[1], 2.0729490168751576, epsilon = 1e-10);
    }

    #[test]
    fn p3_scalar_against_golden_section() {
        // c = 2√(γ₀γ₁λ) + γ₀ = 1 when γ₁ = 0, γ₀ = 1
        let sol = p3_solve(&[2.0], 1.0, 0.0, 3.0).unwrap();
        assert_relative_eq!(sol.lambdas_hat[0], 7.0, epsilon = 1e-10);

        // golden-section minimization of ln x + 7/x
        let f = |x: f64| x.ln() + 7.0 / x;
        let (mut lo, mut hi) = (0.5, 60.0);
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        while hi - lo > 1e-11 {
            let m1 = hi - phi * (hi - lo);
            let m2 = lo + phi * (hi - lo);
            if f(m1) < f(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        // golden-section localization is limited to ~√ε·x around the minimum
        assert_relative_eq!(sol.lambdas_hat[0], 0.5 * (lo + hi), epsilon = 1e-6);
    }

    #[test]
    fn p3_scalar_closed_form_with_mean_radius() {
        // in one dimension the solution is γ₂λ + 2√(γ₀γ₁λ) + γ₀
        for (lambda, g0, g1, g2) in [(2.0, 1.5, 0.5, 3.0), (0.7, 9.0, 0.25, 2.0)] {
            let sol = p3_solve(&[lambda], g0, g1, g2).unwrap();
            let expected = g2 * lambda + 2.0 * (g0 * g1 * lambda).sqrt() + g0;
            assert_relative_eq!(sol.lambdas_hat[0], expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn p3_preset_instance_beats_refined_grid() {
        let lambdas = [1.8090169943749475, 0.6909830056250525];
        let (g0, g1, g2) = (9.0, 0.5, 3.0);
        let sol = p3_solve(&lambdas, g0, g1, g2).unwrap();
        // frozen from an independent constrained solve
        assert_relative_eq!(sol.lambdas_hat[0], 11.283514440379086, epsilon = 1e-8);
        assert_relative_eq!(sol.lambdas_hat[1], 9.61118394701913, epsilon = 1e-8);

        // zooming grid search over (λ̂₀, λ̂₁) with both direction choices
        let c = direction_weights(&lambdas, g0, g1);
        let feasible_obj = |lh: [f64; 2]| -> Option<f64> {
            let mut best: Option<f64> = None;
            for j in 0..2 {
                let i = 1 - j;
                if lh[j] <= c[j] / c[i] * lh[i] + 1e-12 {
                    let obj = lh[0].ln()
                        + lh[1].ln()
                        + g2 * lambdas[0] / lh[0]
                        + g2 * lambdas[1] / lh[1]
                        + c[j] / lh[j];
                    best = Some(best.map_or(obj, |b: f64| b.min(obj)));
                }
            }
            best
        };
        let (mut c0, mut c1) = (15.0, 15.0);
        let mut span = 14.0;
        let mut grid_best = f64::INFINITY;
        for _ in 0..6 {
            let n = 60;
            let (mut best0, mut best1) = (c0, c1);
            for i in 0..=n {
                for j in 0..=n {
                    let lh = [
                        (c0 - span + 2.0 * span * i as f64 / n as f64).max(1e-6),
                        (c1 - span + 2.0 * span * j as f64 / n as f64).max(1e-6),
                    ];
                    if let Some(obj) = feasible_obj(lh) {
                        if obj < grid_best {
                            grid_best = obj;
                            best0 = lh[0];
                            best1 = lh[1];
                        }
                    }
                }
            }
            c0 = best0;
            c1 = best1;
            span /= 20.0;
        }
        assert!(
            sol.objective <= grid_best + 1e-6,
            "{} vs {}",
            sol.objective,
            grid_best
        );
        // the active constraint keeps feasible grid points first-order away
        assert!(
            grid_best - sol.objective <= 1e-4,
            "{} vs {}",
            sol.objective,
            grid_best
        );
    }

    #[test]
    fn p3_rejects_bad_inputs() {
        assert!(matches!(
            p3_solve(&[1.0, -0.5], 1.0, 0.5, 3.0),
            Err(Error::NonPositiveEigenvalue(_))
        ));
        assert!(matches!(
            p3_solve(&[], 1.0, 0.5, 3.0),
            Err(Error::EmptyInput)
        ));
        assert!(p3_solve(&[1.0], -1.0, 0.5, 3.0).is_err());
    }

    #[test]
    fn eig_matches_noise_at_zero_radius() {
        let set = preset_set();
        let z0 = StateControl::new(DVector::zeros(2), DVector::zeros(2));
        // at z = 0 the preset radius vanishes
        assert_eq!(set.gamma0_eval(&z0), 0.0);
        let (pdf, _) = eig_drpp_predict(&set, &z0).unwrap();
        let noise = noise_drpp_predict(&set, &z0).unwrap();
        let diff = (pdf.covariance.matrix() - noise.covariance.matrix()).norm();
        assert!(diff <= 1e-9, "Frobenius gap {diff}");
        let v_eig = eig_drpp_value(&set, 0.0).unwrap();
        let v_noise = noise_drpp_value(&set).unwrap();
        assert!((v_eig - v_noise).abs() <= 1e-9);
    }

    #[test]
    fn eig_preset_prediction_shares_eigenbasis() {
        let set = preset_set();
        let (pdf, sol) = eig_drpp_predict(&set, &z_start()).unwrap();
        assert_relative_eq!(pdf.mean, DVector::from_vec(vec![2.1, 1.0]), epsilon = 1e-12);
        // Σ̂ commutes with Σ̄ exactly when they share an eigenbasis
        let commutator = pdf.covariance.matrix() * set.sigma_bar().matrix()
            - set.sigma_bar().matrix() * pdf.covariance.matrix();
        assert!(commutator.norm() <= 1e-9);
        assert!(sol.lambdas_hat.iter().all(|l| *l > 0.0));
    }

    #[test]
    fn eig_value_monotone_in_radius() {
        let set = preset_set();
        let mut prev = f64::INFINITY;
        for i in 0..=60 {
            let g0 = i as f64 * 0.5;
            let v = eig_drpp_value(&set, g0).unwrap();
            assert!(v <= prev + 1e-12, "value increased at gamma0 = {g0}");
            prev = v;
        }
    }

    #[test]
    fn eig_value_below_noise_value_at_positive_radius() {
        let set = preset_set();
        let v9 = eig_drpp_value(&set, 9.0).unwrap();
        assert!(v9 < NOISE_VALUE_2D);
        assert_relative_eq!(v9, -5.1810121545507615, epsilon = 1e-9);
    }

    #[test]
    fn oracle_matches_nominal_at_nominal_center() {
        let set = preset_set();
        let z = z_start();
        let truth = SdsStepRealization::new(
            set.nominal_evolution(&z).unwrap(),
            set.mu_bar().clone(),
            set.sigma_bar().matrix().clone(),
        )
        .unwrap();
        assert_eq!(
            oracle_predict(&truth, &z).unwrap(),
            nominal_predict(&set, &z).unwrap()
        );
    }

    #[test]
    fn oracle_scores_at_least_other_predictors() {
        // strict propriety: the truth's own pdf maximizes the expected score
        let set = preset_set();
        let z = z_start();
        let mut nu = set.nominal_evolution(&z).unwrap();
        nu[0] += 0.25;
        let mu = DVector::from_vec(vec![0.3, -0.1]);
        let cov = set.sigma_bar().matrix() * set.gamma2() - &mu * mu.transpose();
        let truth = SdsStepRealization::new(nu.clone(), mu.clone(), cov.clone()).unwrap();

        let oracle = oracle_predict(&truth, &z).unwrap();
        let others = [
            nominal_predict(&set, &z).unwrap(),
            noise_drpp_predict(&set, &z).unwrap(),
            eig_drpp_predict(&set, &z).unwrap().0,
        ];

        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let n = 40_000;
        let mut sums = [0.0f64; 4];
        for _ in 0..n {
            let w = GaussianPdf::new(mu.clone(), SpdMatrix::new(cov.clone()).unwrap())
                .unwrap()
                .sample(&mut rng)
                .unwrap();
            let x = &nu + w;
            sums[0] += gaussian_log_density(&oracle, &x).unwrap();
            for (s, p) in sums[1..].iter_mut().zip(&others) {
                *s += gaussian_log_density(p, &x).unwrap();
            }
        }
        for other in &sums[1..] {
            // generous MC slack; propriety is an expectation statement
            assert!(sums[0] / n as f64 >= other / n as f64 - 0.02);
        }
    }

    #[test]
    fn worst_direction_scaling_invariance() {
        let lambdas_hat = [5.7, 2.3, 9.1, 0.8];
        let c = [3.0, 7.0, 1.5, 2.2];
        let base = worst_direction_index(&c, &lambdas_hat);
        for s in [1e-6, 0.3, 7.0, 1e8] {
            let scaled: Vec<f64> = c.iter().map(|v| v * s).collect();
            assert_eq!(worst_direction_index(&scaled, &lambdas_hat), base);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(96))]

        #[test]
        fn p3_kkt_residuals_are_tiny(seed in 0u64..10_000) {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let d = rng.gen_range(1usize..=6);
            let lambdas: Vec<f64> = (0..d).map(|_| rng.gen_range(0.05..8.0)).collect();
            let g0 = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..30.0) };
            let g1 = rng.gen_range(0.0..3.0);
            let g2 = rng.gen_range(0.2..6.0);
            let sol = p3_solve(&lambdas, g0, g1, g2).unwrap();
            prop_assert!(sol.lambdas_hat.iter().all(|l| *l > 0.0));
            let kkt = p3_kkt_residuals(&sol, &lambdas, g0, g1, g2);
            prop_assert!(kkt.stationarity <= 1e-8, "stationarity {}", kkt.stationarity);
            prop_assert!(kkt.complementary_slackness <= 1e-8);
            prop_assert!(kkt.min_multiplier >= -1e-8);
            prop_assert!(kkt.max_primal_violation <= 1e-9);

            // the argmax constraint of the returned solution
            if g0 > 0.0 {
                let c = direction_weights(&lambdas, g0, g1);
                let js = sol.j_star;
                for i in 0..d {
                    prop_assert!(
                        c[js] / sol.lambdas_hat[js] >= c[i] / sol.lambdas_hat[i] - 1e-9
                    );
                }
            }
        }

        #[test]
        fn qclp_constraint_always_active(seed in 0u64..5_000) {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let d = rng.gen_range(1usize..=4);
            let m1 = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
            let m2 = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
            let sigma_bar = SpdMatrix::new(m1.transpose() * &m1 + DMatrix::identity(d, d) * 0.1).unwrap();
            let sigma_hat = SpdMatrix::new(m2.transpose() * &m2 + DMatrix::identity(d, d) * 0.1).unwrap();
            let b = DVector::from_fn(d, |_, _| rng.gen_range(0.1..2.0));
            let gamma1 = rng.gen_range(0.01..2.0);
            let a = qclp_mean_shift(&b, &sigma_bar, &sigma_hat, gamma1).unwrap();
            let norm_sq = crate::linalg::mahalanobis_sq(&a, &DVector::zeros(d), &sigma_bar).unwrap();
            prop_assert!((norm_sq - gamma1).abs() <= 1e-10 * gamma1.max(1.0));
        }
    }
}
