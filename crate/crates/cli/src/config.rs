//! Experiment configuration: a strict JSON schema, validation, and
//! conversion into the runtime types.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use drpp_core::ambiguity::Gamma0;
use drpp_core::sim::{ControllerKind, Experiment, LinearPerturbation, MechanismKind};
use drpp_core::{AmbiguitySet, PredictorKind, SpdMatrix};

use crate::CliError;

/// Serialized experiment description. Unknown keys are rejected everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub horizon: usize,
    pub n_trajectories: usize,
    pub initial_state: Vec<f64>,
    pub mechanism: MechanismConfig,
    pub controller: ControllerConfig,
    pub ambiguity: AmbiguityConfig,
    pub predictors: Vec<PredictorKind>,
    #[serde(default = "default_adversary_target")]
    pub adversary_target: PredictorKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Steps at which predictive ellipses are dumped; defaults to
    /// `{0, T/4, T/2, 3T/4, T−1}`.
    #[serde(default)]
    pub ellipse_steps: Option<Vec<usize>>,
    /// Fraction of steps that must cross a bound before the size diagnosis
    /// fires (1.0 = every step).
    #[serde(default = "default_diagnosis_fraction")]
    pub diagnosis_fraction: f64,
    /// Overrides the per-step evolution-radius cap used by the offline lower
    /// bound; defaults to the supremum of the configured radius family.
    #[serde(default)]
    pub gamma0_cap_override: Option<f64>,
}

fn default_adversary_target() -> PredictorKind {
    PredictorKind::EigDrpp
}

fn default_beta() -> f64 {
    0.9
}

fn default_output_dir() -> String {
    "out".into()
}

fn default_diagnosis_fraction() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismConfig {
    /// One of `lti`, `ltv`, `adversarial`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evolution_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// One of `zero`, `lqr`.
    pub kind: String,
    /// LQR state weight; identity when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_weight: Option<Vec<Vec<f64>>>,
    /// LQR input weight; identity when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_weight: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbiguityConfig {
    pub a_bar: Vec<Vec<f64>>,
    pub b_bar: Vec<Vec<f64>>,
    pub mu_bar: Vec<f64>,
    pub sigma_bar: Vec<Vec<f64>>,
    pub gamma0: Gamma0Config,
    pub gamma1: f64,
    pub gamma2: f64,
    #[serde(default)]
    pub gamma3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gamma0Config {
    /// `norm_capped` (needs `coeff` and `cap`) or `constant` (needs `value`).
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

fn validation(path: &str, message: impl Into<String>) -> CliError {
    CliError::Validation {
        path: path.into(),
        message: message.into(),
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], path: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.is_empty() {
        return Err(validation(path, "matrix must not be empty"));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(validation(
            path,
            "matrix rows must be nonempty and equally sized",
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl Gamma0Config {
    pub fn to_core(&self, path: &str) -> Result<Gamma0, CliError> {
        match self.family.as_str() {
            "norm_capped" => {
                let coeff = self
                    .coeff
                    .ok_or_else(|| validation(path, "norm_capped needs `coeff`"))?;
                let cap = self
                    .cap
                    .ok_or_else(|| validation(path, "norm_capped needs `cap`"))?;
                if self.value.is_some() {
                    return Err(validation(
                        path,
                        "`value` is only valid for the constant family",
                    ));
                }
                Ok(Gamma0::NormCapped { coeff, cap })
            }
            "constant" => {
                let value = self
                    .value
                    .ok_or_else(|| validation(path, "constant needs `value`"))?;
                if self.coeff.is_some() || self.cap.is_some() {
                    return Err(validation(
                        path,
                        "`coeff`/`cap` are only valid for norm_capped",
                    ));
                }
                Ok(Gamma0::Constant { value })
            }
            other => Err(validation(path, format!("unknown gamma0 family `{other}`"))),
        }
    }

    pub fn from_core(g: Gamma0) -> Self {
        match g {
            Gamma0::NormCapped { coeff, cap } => Self {
                family: "norm_capped".into(),
                coeff: Some(coeff),
                cap: Some(cap),
                value: None,
            },
            Gamma0::Constant { value } => Self {
                family: "constant".into(),
                coeff: None,
                cap: None,
                value: Some(value),
            },
        }
    }
}

impl AmbiguityConfig {
    pub fn to_core(&self) -> Result<AmbiguitySet, CliError> {
        let a_bar = matrix_from_rows(&self.a_bar, "ambiguity.a_bar")?;
        let b_bar = matrix_from_rows(&self.b_bar, "ambiguity.b_bar")?;
        let sigma_rows = matrix_from_rows(&self.sigma_bar, "ambiguity.sigma_bar")?;
        let sigma_bar = SpdMatrix::new(sigma_rows)
            .map_err(|e| validation("ambiguity.sigma_bar", e.to_string()))?;
        let gamma0 = self.gamma0.to_core("ambiguity.gamma0")?;
        AmbiguitySet::new(
            a_bar,
            b_bar,
            DVector::from_vec(self.mu_bar.clone()),
            sigma_bar,
            gamma0,
            self.gamma1,
            self.gamma2,
            self.gamma3,
        )
        .map_err(|e| validation("ambiguity", e.to_string()))
    }
}

impl MechanismConfig {
    fn perturbation(&self) -> LinearPerturbation {
        let d = LinearPerturbation::default();
        LinearPerturbation {
            evolution_scale: self.evolution_scale.unwrap_or(d.evolution_scale),
            input_scale: self.input_scale.unwrap_or(d.input_scale),
            mean_scale: self.mean_scale.unwrap_or(d.mean_scale),
        }
    }

    pub fn to_core(&self) -> Result<MechanismKind, CliError> {
        match self.kind.as_str() {
            "lti" => Ok(MechanismKind::Lti(self.perturbation())),
            "ltv" => Ok(MechanismKind::Ltv(self.perturbation())),
            "adversarial" => {
                if self.evolution_scale.is_some()
                    || self.input_scale.is_some()
                    || self.mean_scale.is_some()
                {
                    return Err(validation(
                        "mechanism",
                        "perturbation scales are only valid for lti/ltv",
                    ));
                }
                Ok(MechanismKind::Adversarial)
            }
            other => Err(validation(
                "mechanism.kind",
                format!("unknown mechanism `{other}`"),
            )),
        }
    }
}

impl ControllerConfig {
    pub fn to_core(&self, d_x: usize, d_u: usize) -> Result<ControllerKind, CliError> {
        match self.kind.as_str() {
            "zero" => {
                if self.state_weight.is_some() || self.input_weight.is_some() {
                    return Err(validation("controller", "weights are only valid for lqr"));
                }
                Ok(ControllerKind::Zero)
            }
            "lqr" => {
                let state_weight = match &self.state_weight {
                    Some(rows) => matrix_from_rows(rows, "controller.state_weight")?,
                    None => DMatrix::identity(d_x, d_x),
                };
                let input_weight = match &self.input_weight {
                    Some(rows) => matrix_from_rows(rows, "controller.input_weight")?,
                    None => DMatrix::identity(d_u, d_u),
                };
                Ok(ControllerKind::Lqr {
                    state_weight,
                    input_weight,
                })
            }
            other => Err(validation(
                "controller.kind",
                format!("unknown controller `{other}`"),
            )),
        }
    }
}

impl ExperimentConfig {
    /// Parse a JSON document against the strict schema, then validate the
    /// cross-field invariants.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let deserializer = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig =
            serde_path_to_error::deserialize(deserializer).map_err(|e| CliError::Schema {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.horizon == 0 {
            return Err(validation("horizon", "must be at least 1"));
        }
        if self.n_trajectories == 0 {
            return Err(validation("n_trajectories", "must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(validation(
                "beta",
                format!("must lie in (0, 1), got {}", self.beta),
            ));
        }
        if !(0.0..=1.0).contains(&self.diagnosis_fraction) {
            return Err(validation("diagnosis_fraction", "must lie in [0, 1]"));
        }
        if self.predictors.is_empty() {
            return Err(validation("predictors", "need at least one predictor"));
        }
        let mut seen = Vec::new();
        for p in &self.predictors {
            if seen.contains(p) {
                return Err(validation(
                    "predictors",
                    format!("duplicate predictor `{p}`"),
                ));
            }
            seen.push(*p);
        }

        // materializing the runtime types re-checks the numeric invariants
        let set = self.ambiguity.to_core()?;
        let d_x = set.state_dim();
        let d_u = set.control_dim();
        if self.initial_state.len() != d_x {
            return Err(validation(
                "initial_state",
                format!("expected dimension {d_x}, got {}", self.initial_state.len()),
            ));
        }
        let mechanism = self.mechanism.to_core()?;
        self.controller.to_core(d_x, d_u)?;

        if matches!(mechanism, MechanismKind::Adversarial) {
            if self.adversary_target == PredictorKind::OptimalOracle {
                return Err(validation(
                    "adversary_target",
                    "the oracle cannot be the adversary's target",
                ));
            }
            if !self.predictors.contains(&self.adversary_target) {
                return Err(validation(
                    "adversary_target",
                    "the adversarial mechanism needs its target among the predictors",
                ));
            }
        }
        if let Some(steps) = &self.ellipse_steps {
            if let Some(bad) = steps.iter().find(|s| **s >= self.horizon) {
                return Err(validation(
                    "ellipse_steps",
                    format!("step {bad} is outside the horizon"),
                ));
            }
        }
        if let Some(cap) = self.gamma0_cap_override {
            if cap < 0.0 {
                return Err(validation("gamma0_cap_override", "must be nonnegative"));
            }
        }
        Ok(())
    }

    /// Runtime experiment description for the simulation layer.
    pub fn to_experiment(&self) -> Result<Experiment, CliError> {
        let set = self.ambiguity.to_core()?;
        let mechanism = self.mechanism.to_core()?;
        let controller = self
            .controller
            .to_core(set.state_dim(), set.control_dim())?;
        Ok(Experiment {
            set,
            mechanism,
            controller,
            predictors: self.predictors.clone(),
            adversary_target: self.adversary_target,
            horizon: self.horizon,
            initial_state: DVector::from_vec(self.initial_state.clone()),
        })
    }

    /// Steps at which ellipses are dumped.
    pub fn ellipse_steps(&self) -> Vec<usize> {
        let mut steps = match &self.ellipse_steps {
            Some(s) => s.clone(),
            None => {
                let t = self.horizon;
                vec![0, t / 4, t / 2, 3 * t / 4, t - 1]
            }
        };
        steps.sort_unstable();
        steps.dedup();
        steps.retain(|s| *s < self.horizon);
        steps
    }

    /// Per-step caps for the offline lower bound.
    pub fn gamma0_caps(&self, set: &AmbiguitySet) -> Vec<f64> {
        let cap = self.gamma0_cap_override.unwrap_or_else(|| set.gamma0_sup());
        vec![cap; self.horizon]
    }
}
