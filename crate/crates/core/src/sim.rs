//! Ground-truth system mechanisms, controllers, the prediction-trajectory
//! loop, score aggregation, and confidence-region computation.
//!
//! A mechanism realizes one in-set step model per time step. The linear
//! mechanisms perturb the nominal model inside the ambiguity set (draws that
//! would leave the set are resampled or projected back onto its boundary);
//! the adversarial mechanism picks the worst in-set step against a target
//! predictor's covariance after predictions are made.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::ambiguity::{AmbiguitySet, SdsStepRealization, StateControl};
use crate::gaussian::{confidence_scale, gaussian_log_density, GaussianPdf};
use crate::linalg::{mahalanobis_sq, min_eigenvalue, spectral_decompose, SpdMatrix};
use crate::predictors::{
    eig_drpp_predict, noise_drpp_predict, nominal_predict, oracle_predict, PredictorKind,
};
use crate::worstcase::{eig_worst_step, worst_sigma};
use crate::{Error, Result};

/// Perturbation scales for the linear mechanisms. The defaults match the
/// reference two-dimensional experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearPerturbation {
    /// Scale of the uniform draw added to the `(0, 1)` entry of the state matrix.
    pub evolution_scale: f64,
    /// Scale of the uniform draw added to the `(0, 1)` entry of the input matrix.
    pub input_scale: f64,
    /// Scale of the uniform noise-mean draw.
    pub mean_scale: f64,
}

impl Default for LinearPerturbation {
    fn default() -> Self {
        Self {
            evolution_scale: 0.3,
            input_scale: 0.3,
            mean_scale: 0.5,
        }
    }
}

/// Which ground-truth mechanism realizes the system steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MechanismKind {
    /// One perturbed linear model drawn per trajectory.
    Lti(LinearPerturbation),
    /// Fresh independent perturbation draws at every step.
    Ltv(LinearPerturbation),
    /// Worst in-set step against the configured target predictor.
    Adversarial,
}

/// Control policy applied at every step.
#[derive(Debug, Clone, PartialEq)]
pub enum ControllerKind {
    Zero,
    Lqr {
        state_weight: DMatrix<f64>,
        input_weight: DMatrix<f64>,
    },
}

impl ControllerKind {
    /// LQR with identity weights of the given dimensions.
    pub fn lqr_identity(d_x: usize, d_u: usize) -> Self {
        ControllerKind::Lqr {
            state_weight: DMatrix::identity(d_x, d_x),
            input_weight: DMatrix::identity(d_u, d_u),
        }
    }
}

/// Infinite-horizon discrete LQR gain for `x_{k+1} = A x + B u`, solving the
/// Riccati equation by fixed-point iteration to 1e-12 residual. The control
/// law is `u = −K x`.
pub fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    state_weight: &DMatrix<f64>,
    input_weight: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let d_x = a.nrows();
    let d_u = b.ncols();
    if a.ncols() != d_x || b.nrows() != d_x {
        return Err(Error::DimensionMismatch {
            expected: d_x,
            got: b.nrows(),
        });
    }
    if state_weight.nrows() != d_x || input_weight.nrows() != d_u {
        return Err(Error::DimensionMismatch {
            expected: d_x,
            got: state_weight.nrows(),
        });
    }
    if min_eigenvalue(state_weight) < -1e-10 {
        return Err(Error::NotPsd {
            min_eigenvalue: min_eigenvalue(state_weight),
        });
    }
    // the input weight must be strictly PD for the inner inverse
    SpdMatrix::new(input_weight.clone())?;

    let a_t = a.transpose();
    let b_t = b.transpose();
    let mut p = state_weight.clone();
    let max_iterations = 100_000;
    for _ in 0..max_iterations {
        let gain_denominator = input_weight + &b_t * &p * b;
        let inv = gain_denominator
            .clone()
            .try_inverse()
            .ok_or(Error::SingularMatrix)?;
        let next = &a_t * &p * a - &a_t * &p * b * &inv * &b_t * &p * a + state_weight;
        let residual = (&next - &p).amax();
        p = next;
        if residual <= 1e-12 {
            let inv = (input_weight + &b_t * &p * b)
                .try_inverse()
                .ok_or(Error::SingularMatrix)?;
            return Ok(inv * &b_t * &p * a);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iterations,
    })
}

/// A controller instantiated against a nominal model.
#[derive(Debug, Clone, PartialEq)]
pub enum Controller {
    Zero { d_u: usize },
    Lqr { gain: DMatrix<f64> },
}

impl Controller {
    pub fn control(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Controller::Zero { d_u } => DVector::zeros(*d_u),
            Controller::Lqr { gain } => -(gain * x),
        }
    }
}

/// Build the runtime controller from its kind and the nominal model.
pub fn build_controller(kind: &ControllerKind, set: &AmbiguitySet) -> Result<Controller> {
    match kind {
        ControllerKind::Zero => Ok(Controller::Zero {
            d_u: set.control_dim(),
        }),
        ControllerKind::Lqr {
            state_weight,
            input_weight,
        } => {
            let gain = lqr_gain(set.a_bar(), set.b_bar(), state_weight, input_weight)?;
            Ok(Controller::Lqr { gain })
        }
    }
}

/// One perturbed-linear-model draw: matrix perturbations and a feasible
/// noise mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDraw {
    pub alpha1: f64,
    pub alpha2: f64,
    pub noise_mean: DVector<f64>,
}

/// Draw perturbations uniformly, resampling the noise mean until it lies in
/// the feasible ellipsoid (the uniform box sticks out of it near two
/// corners). After many failures the draw is projected onto the boundary.
pub fn draw_linear<R: Rng + ?Sized>(
    set: &AmbiguitySet,
    pert: &LinearPerturbation,
    rng: &mut R,
) -> Result<LinearDraw> {
    let d = set.state_dim();
    let alpha1 = rng.gen_range(-1.0..=1.0);
    let alpha2 = rng.gen_range(-1.0..=1.0);
    let mut noise_mean = set.mu_bar().clone();
    for attempt in 0..10_000 {
        let alpha3 = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..=1.0));
        let candidate = set.mu_bar() + alpha3 * pert.mean_scale;
        let shift = mahalanobis_sq(&candidate, set.mu_bar(), set.sigma_bar())?;
        if shift <= set.gamma1() {
            noise_mean = candidate;
            break;
        }
        if attempt == 9_999 {
            // project onto the feasible boundary rather than loop forever
            let delta = &candidate - set.mu_bar();
            noise_mean = set.mu_bar() + delta * (set.gamma1() / shift).sqrt();
        }
    }
    Ok(LinearDraw {
        alpha1,
        alpha2,
        noise_mean,
    })
}

/// Realize one linear-mechanism step from a draw, clamping the evolution
/// shift onto the feasible ball when the current `z` makes the raw
/// perturbation leave the set. Returns the realization and whether clamping
/// occurred.
pub fn linear_step(
    set: &AmbiguitySet,
    z: &StateControl,
    draw: &LinearDraw,
    pert: &LinearPerturbation,
) -> Result<(SdsStepRealization, bool)> {
    let d = set.state_dim();
    let mut shift: DVector<f64> = DVector::zeros(d);
    if d >= 2 {
        shift[0] += pert.evolution_scale * draw.alpha1 * z.state[1];
        if z.control.len() >= 2 {
            shift[0] += pert.input_scale * draw.alpha2 * z.control[1];
        }
    }
    let gamma0_val = set.gamma0_eval(z);
    let norm_sq = shift.norm_squared();
    let clamped = norm_sq > gamma0_val;
    if clamped {
        let factor: f64 = (gamma0_val / norm_sq).sqrt();
        shift *= factor;
    }
    let evolution = set.nominal_evolution(z)? + shift;
    let sigma = worst_sigma(set, &draw.noise_mean)?;
    let realization = SdsStepRealization::new(evolution, draw.noise_mean.clone(), sigma)?;
    Ok((realization, clamped))
}

/// Everything needed to run trajectories for one experiment cell.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub set: AmbiguitySet,
    pub mechanism: MechanismKind,
    pub controller: ControllerKind,
    pub predictors: Vec<PredictorKind>,
    /// Whose covariance the adversarial mechanism attacks.
    pub adversary_target: PredictorKind,
    pub horizon: usize,
    pub initial_state: DVector<f64>,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter {
                name: "horizon",
                message: "must be at least 1".into(),
            });
        }
        if self.initial_state.len() != self.set.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.set.state_dim(),
                got: self.initial_state.len(),
            });
        }
        if self.predictors.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(())
    }
}

/// Per-step log of one trajectory.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub k: usize,
    pub state: DVector<f64>,
    pub control: DVector<f64>,
    pub next_state: DVector<f64>,
    pub realization: SdsStepRealization,
    /// Membership of the realized step in the ambiguity set.
    pub in_set: bool,
    /// One pdf per configured predictor, in configuration order.
    pub predictions: Vec<GaussianPdf>,
    pub step_scores: Vec<f64>,
    /// `cum[k] = cum[k−1] + step`, per predictor.
    pub cum_scores: Vec<f64>,
}

/// Full record of one simulated trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub predictors: Vec<PredictorKind>,
    pub steps: Vec<StepRecord>,
    /// Steps where the linear mechanisms clamped the evolution shift.
    pub evolution_clamp_events: usize,
}

impl TrajectoryRecord {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn membership_violations(&self) -> usize {
        self.steps.iter().filter(|s| !s.in_set).count()
    }
}

/// Independent per-trajectory random stream derived from a master seed.
pub fn trajectory_rng(master_seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Sample the realized next state `x_{k+1} = ν + w`, `w ~ N(μ, Σ)`, through
/// the spectral square root so boundary (singular) covariances are fine.
pub fn sample_next_state<R: Rng + ?Sized>(
    realization: &SdsStepRealization,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let dec = spectral_decompose(realization.noise_cov())?;
    let d = realization.dim();
    let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let scaled = DVector::from_fn(d, |i, _| dec.eigenvalues[i].max(0.0).sqrt() * z[i]);
    Ok(&realization.evolution + &realization.noise_mean + &dec.eigenvectors * scaled)
}

/// Run one trajectory: control, predict, realize, score — in that order.
pub fn run_trajectory<R: Rng + ?Sized>(
    experiment: &Experiment,
    rng: &mut R,
) -> Result<TrajectoryRecord> {
    let controller = build_controller(&experiment.controller, &experiment.set)?;
    run_trajectory_with(experiment, &controller, rng)
}

/// As [`run_trajectory`] with a prebuilt controller (shared across workers).
pub fn run_trajectory_with<R: Rng + ?Sized>(
    experiment: &Experiment,
    controller: &Controller,
    rng: &mut R,
) -> Result<TrajectoryRecord> {
    experiment.validate()?;
    let set = &experiment.set;
    let n_predictors = experiment.predictors.len();

    let mut lti_draw = None;
    if let MechanismKind::Lti(pert) = experiment.mechanism {
        lti_draw = Some(draw_linear(set, &pert, rng)?);
    }

    let mut x = experiment.initial_state.clone();
    let mut cum = vec![0.0; n_predictors];
    let mut steps = Vec::with_capacity(experiment.horizon);
    let mut clamp_events = 0usize;

    for k in 0..experiment.horizon {
        let u = controller.control(&x);
        let z = StateControl::new(x.clone(), u.clone());

        // non-adversarial realizations exist before any prediction
        let mut realization = match experiment.mechanism {
            MechanismKind::Lti(pert) => {
                let draw = lti_draw.as_ref().expect("drawn at trajectory start");
                let (r, clamped) = linear_step(set, &z, draw, &pert)?;
                clamp_events += clamped as usize;
                Some(r)
            }
            MechanismKind::Ltv(pert) => {
                let draw = draw_linear(set, &pert, rng)?;
                let (r, clamped) = linear_step(set, &z, &draw, &pert)?;
                clamp_events += clamped as usize;
                Some(r)
            }
            MechanismKind::Adversarial => None,
        };

        let mut predictions: Vec<Option<GaussianPdf>> = vec![None; n_predictors];
        for (idx, kind) in experiment.predictors.iter().enumerate() {
            predictions[idx] = match kind {
                PredictorKind::Nominal => Some(nominal_predict(set, &z)?),
                PredictorKind::NoiseDrpp => Some(noise_drpp_predict(set, &z)?),
                PredictorKind::EigDrpp => Some(eig_drpp_predict(set, &z)?.0),
                // the oracle needs the realized step; filled in below
                PredictorKind::OptimalOracle => None,
            };
        }

        if realization.is_none() {
            let target_idx = experiment
                .predictors
                .iter()
                .position(|p| *p == experiment.adversary_target)
                .ok_or(Error::MechanismOrderViolation)?;
            let target_pdf = predictions[target_idx]
                .as_ref()
                .ok_or(Error::MechanismOrderViolation)?;
            realization = Some(eig_worst_step(set, &z, &target_pdf.covariance)?);
        }
        let realization = realization.expect("realized above");

        for (idx, kind) in experiment.predictors.iter().enumerate() {
            if *kind == PredictorKind::OptimalOracle {
                predictions[idx] = Some(oracle_predict(&realization, &z)?);
            }
        }
        let predictions: Vec<GaussianPdf> = predictions
            .into_iter()
            .map(|p| p.expect("every predictor emitted a pdf"))
            .collect();

        let next_state = sample_next_state(&realization, rng)?;
        let in_set = set.contains(&z, &realization)?.is_member();

        let mut step_scores = Vec::with_capacity(n_predictors);
        for (pdf, cum_score) in predictions.iter().zip(cum.iter_mut()) {
            let s = gaussian_log_density(pdf, &next_state)?;
            step_scores.push(s);
            *cum_score += s;
        }

        steps.push(StepRecord {
            k,
            state: x.clone(),
            control: u,
            next_state: next_state.clone(),
            realization,
            in_set,
            predictions,
            step_scores,
            cum_scores: cum.clone(),
        });
        x = next_state;
    }

    Ok(TrajectoryRecord {
        predictors: experiment.predictors.clone(),
        steps,
        evolution_clamp_events: clamp_events,
    })
}

/// Run `n` trajectories on independent substreams of `master_seed`,
/// in parallel, with a deterministic (index-ordered) result.
pub fn run_many(
    experiment: &Experiment,
    master_seed: u64,
    stream_offset: u64,
    n: usize,
) -> Result<Vec<TrajectoryRecord>> {
    let controller = build_controller(&experiment.controller, &experiment.set)?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(master_seed, stream_offset + i as u64);
            run_trajectory_with(experiment, &controller, &mut rng)
        })
        .collect()
}

/// Mean / 5% / 95% of the per-trajectory temporal-average scores at one step.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SummaryStat {
    pub mean: f64,
    pub p5: f64,
    pub p95: f64,
}

/// Per-step summary for every predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub k: usize,
    /// One entry per predictor, in record order.
    pub stats: Vec<SummaryStat>,
}

/// Aggregated scores across trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSummary {
    pub predictors: Vec<PredictorKind>,
    pub n_trajectories: usize,
    pub steps: Vec<StepStats>,
}

fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Aggregate per-trajectory temporal averages `s_{k+1}/(k+1)` into per-step
/// mean and nearest-rank 5%/95% percentiles.
pub fn aggregate_scores(records: &[TrajectoryRecord]) -> Result<ScoreSummary> {
    let first = records.first().ok_or(Error::EmptyInput)?;
    let horizon = first.horizon();
    let predictors = first.predictors.clone();
    for r in records {
        if r.horizon() != horizon {
            return Err(Error::DimensionMismatch {
                expected: horizon,
                got: r.horizon(),
            });
        }
        if r.predictors != predictors {
            return Err(Error::InvalidParameter {
                name: "records",
                message: "all trajectories must share the same predictor list".into(),
            });
        }
    }

    let n = records.len();
    let mut steps = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let mut stats = Vec::with_capacity(predictors.len());
        for p_idx in 0..predictors.len() {
            let mut averages: Vec<f64> = records
                .iter()
                .map(|r| r.steps[k].cum_scores[p_idx] / (k + 1) as f64)
                .collect();
            averages.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
            let mean = averages.iter().sum::<f64>() / n as f64;
            stats.push(SummaryStat {
                mean,
                p5: nearest_rank(&averages, 0.05),
                p95: nearest_rank(&averages, 0.95),
            });
        }
        steps.push(StepStats { k, stats });
    }
    Ok(ScoreSummary {
        predictors,
        n_trajectories: n,
        steps,
    })
}

/// Mean per-step scores across trajectories (`[predictor][step]`), the input
/// to the ambiguity-size diagnosis.
pub fn mean_step_scores(records: &[TrajectoryRecord]) -> Result<Vec<Vec<f64>>> {
    let first = records.first().ok_or(Error::EmptyInput)?;
    let horizon = first.horizon();
    let n_predictors = first.predictors.len();
    let mut out = vec![vec![0.0; horizon]; n_predictors];
    for r in records {
        for (k, step) in r.steps.iter().enumerate() {
            for (p, score) in step.step_scores.iter().enumerate() {
                out[p][k] += score;
            }
        }
    }
    let n = records.len() as f64;
    for row in &mut out {
        for v in row {
            *v /= n;
        }
    }
    Ok(out)
}

/// Empirical coverage of the realized next states by each predictor's
/// beta-confidence region, pooled over all steps and trajectories.
pub fn coverage(records: &[TrajectoryRecord], beta: f64) -> Result<Vec<f64>> {
    let first = records.first().ok_or(Error::EmptyInput)?;
    let d = first.steps[0].next_state.len();
    let scale = confidence_scale(beta, d)?;
    let n_predictors = first.predictors.len();
    let mut hits = vec![0usize; n_predictors];
    let mut total = 0usize;
    for r in records {
        for step in &r.steps {
            total += 1;
            for (p_idx, pdf) in step.predictions.iter().enumerate() {
                let m = mahalanobis_sq(&step.next_state, &pdf.mean, &pdf.covariance)?;
                if m <= scale {
                    hits[p_idx] += 1;
                }
            }
        }
    }
    Ok(hits
        .iter()
        .map(|h| *h as f64 / total.max(1) as f64)
        .collect())
}

/// Elliptical beta-confidence region of a Gaussian pdf.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceEllipse {
    pub center: DVector<f64>,
    pub shape: SpdMatrix,
    /// Chi-square quantile so that the region carries mass `beta`.
    pub scale: f64,
    pub beta: f64,
}

impl ConfidenceEllipse {
    pub fn contains(&self, x: &DVector<f64>) -> Result<bool> {
        Ok(mahalanobis_sq(x, &self.center, &self.shape)? <= self.scale)
    }
}

/// Beta-confidence region of a Gaussian predictive pdf.
pub fn confidence_ellipse(p: &GaussianPdf, beta: f64) -> Result<ConfidenceEllipse> {
    Ok(ConfidenceEllipse {
        center: p.mean.clone(),
        shape: p.covariance.clone(),
        scale: confidence_scale(beta, p.dim())?,
        beta,
    })
}
