//! Implementations of the CLI subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;
use serde_json::json;

use drpp_core::ambiguity::StateControl;
use drpp_core::predictors::{eig_drpp_predict, noise_drpp_predict, nominal_predict, PredictorKind};
use drpp_core::sim::{aggregate_scores, confidence_ellipse, coverage, mean_step_scores, run_many};
use drpp_core::worstcase::{bounds_report, diagnose_ambiguity, AmbiguityVerdict, Verdict};
use drpp_core::{AmbiguitySet, BoundsReport};

use crate::config::{
    AmbiguityConfig, ControllerConfig, ExperimentConfig, Gamma0Config, MechanismConfig,
};
use crate::output::{
    bounds_csv, summary_csv, trajectories_csv, write_json, write_text, EllipseJson, PdfJson,
};
use crate::CliError;

/// Environment variable that overrides any configured output directory.
pub const OUTPUT_DIR_ENV: &str = "DRPP_OUTPUT_DIR";

/// Resolve the effective output directory for a run.
pub fn resolve_output_dir(configured: &str) -> PathBuf {
    match std::env::var(OUTPUT_DIR_ENV) {
        Ok(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from(configured),
    }
}

/// Offline bounds for a configuration; also writes `bounds.csv`.
pub fn cmd_bounds(config: &ExperimentConfig, out_dir: &Path) -> Result<BoundsReport, CliError> {
    let set = config.ambiguity.to_core()?;
    let sets = vec![set.clone(); config.horizon];
    let caps = config.gamma0_caps(&set);
    let report = bounds_report(&sets, &caps)?;
    write_text(
        &out_dir.join("bounds.csv"),
        &bounds_csv(&report.per_step_upper, &report.per_step_lower),
    )?;
    Ok(report)
}

/// Size diagnosis for every DRPP predictor plus the combined call.
#[derive(Debug, Clone, Serialize)]
pub struct VerdictReport {
    pub bounds: BoundsReport,
    pub per_predictor: BTreeMap<String, AmbiguityVerdict>,
    /// Too large if any DRPP predictor's scores beat the upper bound
    /// everywhere; too small if Eig-DRPP trails the lower bound everywhere.
    pub overall: Verdict,
}

fn verdict_report(
    config: &ExperimentConfig,
    set: &AmbiguitySet,
    step_means: &[Vec<f64>],
) -> Result<VerdictReport, CliError> {
    let sets = vec![set.clone(); config.horizon];
    let caps = config.gamma0_caps(set);
    let bounds = bounds_report(&sets, &caps)?;

    let mut per_predictor = BTreeMap::new();
    for (idx, kind) in config.predictors.iter().enumerate() {
        if matches!(kind, PredictorKind::NoiseDrpp | PredictorKind::EigDrpp) {
            let verdict = diagnose_ambiguity(
                &step_means[idx],
                &bounds.per_step_upper,
                &bounds.per_step_lower,
                config.diagnosis_fraction,
            )?;
            per_predictor.insert(kind.name().to_string(), verdict);
        }
    }

    let any_too_large = per_predictor
        .values()
        .any(|v| v.verdict == Verdict::TooLarge);
    let eig_too_small = per_predictor
        .get(PredictorKind::EigDrpp.name())
        .is_some_and(|v| v.verdict == Verdict::TooSmall);
    let overall = if any_too_large {
        Verdict::TooLarge
    } else if eig_too_small {
        Verdict::TooSmall
    } else {
        Verdict::Consistent
    };

    Ok(VerdictReport {
        bounds,
        per_predictor,
        overall,
    })
}

/// Run the configured Monte-Carlo experiment and emit
/// `trajectories.csv`, `summary.csv`, `ellipses.json`, and `verdict.json`.
pub fn cmd_simulate(config: &ExperimentConfig, out_dir: &Path) -> Result<(), CliError> {
    let experiment = config.to_experiment()?;
    let records = run_many(&experiment, config.seed, 0, config.n_trajectories)?;
    let summary = aggregate_scores(&records)?;

    write_text(
        &out_dir.join("trajectories.csv"),
        &trajectories_csv(&records),
    )?;
    write_text(&out_dir.join("summary.csv"), &summary_csv(&summary))?;

    let mut ellipses = Vec::new();
    let reference = &records[0];
    for &k in &config.ellipse_steps() {
        let step = &reference.steps[k];
        let realized: Vec<f64> = step.next_state.iter().copied().collect();
        for (idx, kind) in config.predictors.iter().enumerate() {
            let e = confidence_ellipse(&step.predictions[idx], config.beta)?;
            ellipses.push(EllipseJson::new(k, kind.name(), &e, &realized));
        }
    }
    write_json(
        &out_dir.join("ellipses.json"),
        &json!({
            "beta": config.beta,
            "trajectory": 0,
            "ellipses": ellipses,
        }),
    )?;

    let step_means = mean_step_scores(&records)?;
    let verdict = verdict_report(config, &experiment.set, &step_means)?;
    write_json(&out_dir.join("verdict.json"), &verdict)?;
    Ok(())
}

/// One-shot pdf emission for a state-control pair.
pub fn cmd_predict(
    config: &ExperimentConfig,
    state: &[f64],
    control: &[f64],
) -> Result<serde_json::Value, CliError> {
    let set = config.ambiguity.to_core()?;
    if state.len() != set.state_dim() {
        return Err(CliError::Validation {
            path: "--state".into(),
            message: format!(
                "expected dimension {}, got {}",
                set.state_dim(),
                state.len()
            ),
        });
    }
    if control.len() != set.control_dim() {
        return Err(CliError::Validation {
            path: "--control".into(),
            message: format!(
                "expected dimension {}, got {}",
                set.control_dim(),
                control.len()
            ),
        });
    }
    let z = StateControl::new(
        DVector::from_vec(state.to_vec()),
        DVector::from_vec(control.to_vec()),
    );

    let mut predictions = serde_json::Map::new();
    let mut skipped = Vec::new();
    for kind in &config.predictors {
        match kind {
            PredictorKind::Nominal => {
                let pdf = nominal_predict(&set, &z)?;
                predictions.insert(kind.name().into(), json!(PdfJson::from_pdf(&pdf)));
            }
            PredictorKind::NoiseDrpp => {
                let pdf = noise_drpp_predict(&set, &z)?;
                predictions.insert(kind.name().into(), json!(PdfJson::from_pdf(&pdf)));
            }
            PredictorKind::EigDrpp => {
                let (pdf, sol) = eig_drpp_predict(&set, &z)?;
                let mut value = serde_json::to_value(PdfJson::from_pdf(&pdf))?;
                value["p3"] = json!({
                    "lambdas_hat": sol.lambdas_hat.iter().copied().collect::<Vec<f64>>(),
                    "j_star": sol.j_star,
                    "objective": sol.objective,
                });
                predictions.insert(kind.name().into(), value);
            }
            // the oracle conditions on a realized step, which a one-shot
            // query does not have
            PredictorKind::OptimalOracle => skipped.push(kind.name()),
        }
    }

    Ok(json!({
        "state": state,
        "control": control,
        "gamma0": set.gamma0_eval(&z),
        "predictions": predictions,
        "skipped": skipped,
    }))
}

/// The six reference cells: three mechanisms under two controllers.
pub const REFERENCE_CELLS: [(&str, &str); 6] = [
    ("lti", "zero"),
    ("ltv", "zero"),
    ("adversarial", "zero"),
    ("lti", "lqr"),
    ("ltv", "lqr"),
    ("adversarial", "lqr"),
];

/// The bundled reference configuration: a two-dimensional integrator-like
/// nominal model with correlated noise and a capped evolution radius.
pub fn reference_config(mechanism: &str, controller: &str, seed: u64) -> ExperimentConfig {
    let oracle_applies = mechanism != "adversarial";
    let mut predictors = vec![
        PredictorKind::Nominal,
        PredictorKind::NoiseDrpp,
        PredictorKind::EigDrpp,
    ];
    if oracle_applies {
        predictors.push(PredictorKind::OptimalOracle);
    }
    ExperimentConfig {
        horizon: 32,
        n_trajectories: 1000,
        initial_state: vec![2.0, 1.0],
        mechanism: MechanismConfig {
            kind: mechanism.into(),
            evolution_scale: None,
            input_scale: None,
            mean_scale: None,
        },
        controller: ControllerConfig {
            kind: controller.into(),
            state_weight: None,
            input_weight: None,
        },
        ambiguity: AmbiguityConfig {
            a_bar: vec![vec![1.0, 0.1], vec![0.0, 1.0]],
            b_bar: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            mu_bar: vec![0.0, 0.0],
            sigma_bar: vec![vec![1.0, 0.5], vec![0.5, 1.5]],
            gamma0: Gamma0Config {
                family: "norm_capped".into(),
                coeff: Some(0.3),
                cap: Some(5.0),
                value: None,
            },
            gamma1: 0.5,
            gamma2: 3.0,
            gamma3: 0.0,
        },
        predictors,
        adversary_target: PredictorKind::EigDrpp,
        beta: 0.9,
        seed,
        output_dir: "out".into(),
        ellipse_steps: None,
        diagnosis_fraction: 1.0,
        gamma0_cap_override: None,
    }
}

/// Per-cell section of the combined reproduction report.
#[derive(Debug, Clone, Serialize)]
pub struct CellReport {
    pub mechanism: String,
    pub controller: String,
    pub n_trajectories: usize,
    pub horizon: usize,
    /// Mean temporal-average score at the final step, per predictor.
    pub final_step_mean: BTreeMap<String, f64>,
    /// Empirical beta-region coverage of realized next states, per predictor.
    pub coverage: BTreeMap<String, f64>,
    pub membership_violations: usize,
    pub evolution_clamp_events: usize,
    pub bounds: BoundsReport,
    pub verdicts: BTreeMap<String, AmbiguityVerdict>,
    pub overall_verdict: Verdict,
}

/// Combined reproduction report.
#[derive(Debug, Clone, Serialize)]
pub struct ReproductionReport {
    pub seed: u64,
    pub beta: f64,
    pub cells: BTreeMap<String, CellReport>,
}

/// Run all six reference cells and write one `summary.csv` per cell plus a
/// combined `report.json`.
pub fn cmd_reproduce(out_dir: &Path, seed: u64) -> Result<ReproductionReport, CliError> {
    let mut cells = BTreeMap::new();
    for (cell_idx, (mechanism, controller)) in REFERENCE_CELLS.iter().enumerate() {
        let config = reference_config(mechanism, controller, seed);
        config.validate()?;
        let experiment = config.to_experiment()?;
        // disjoint stream blocks keep the cells statistically independent
        let stream_offset = cell_idx as u64 * 1_000_000;
        let records = run_many(&experiment, seed, stream_offset, config.n_trajectories)?;
        let summary = aggregate_scores(&records)?;

        let cell_name = format!("{mechanism}_{controller}");
        write_text(
            &out_dir.join(&cell_name).join("summary.csv"),
            &summary_csv(&summary),
        )?;

        let last = summary.steps.last().expect("horizon >= 1");
        let final_step_mean: BTreeMap<String, f64> = summary
            .predictors
            .iter()
            .zip(&last.stats)
            .map(|(p, s)| (p.name().to_string(), s.mean))
            .collect();

        let cover = coverage(&records, config.beta)?;
        let coverage_map: BTreeMap<String, f64> = summary
            .predictors
            .iter()
            .zip(&cover)
            .map(|(p, c)| (p.name().to_string(), *c))
            .collect();

        let step_means = mean_step_scores(&records)?;
        let verdict = verdict_report(&config, &experiment.set, &step_means)?;

        cells.insert(
            cell_name,
            CellReport {
                mechanism: mechanism.to_string(),
                controller: controller.to_string(),
                n_trajectories: config.n_trajectories,
                horizon: config.horizon,
                final_step_mean,
                coverage: coverage_map,
                membership_violations: records.iter().map(|r| r.membership_violations()).sum(),
                evolution_clamp_events: records.iter().map(|r| r.evolution_clamp_events).sum(),
                bounds: verdict.bounds.clone(),
                verdicts: verdict.per_predictor,
                overall_verdict: verdict.overall,
            },
        );
    }

    let report = ReproductionReport {
        seed,
        beta: 0.9,
        cells,
    };
    write_json(&out_dir.join("report.json"), &report)?;
    Ok(report)
}
