//! Deterministic emission of CSV and JSON artifacts.
//!
//! Floats in CSVs are printed with 17 significant digits in scientific
//! notation, which round-trips every finite f64 bit-exactly and keeps
//! repeated runs byte-identical.

use std::fs;
use std::path::Path;

use serde::Serialize;

use drpp_core::sim::{ConfidenceEllipse, ScoreSummary, TrajectoryRecord};
use drpp_core::GaussianPdf;

use crate::CliError;

/// 17-significant-digit scientific formatting (bit-faithful doubles).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::from)?;
    text.push('\n');
    write_text(path, &text)
}

/// Full per-step trajectory dump.
///
/// Columns: `traj_id,k,x*,u*,xnext*,in_set`, then per predictor the
/// prediction mean, row-major covariance entries, step score, and cumulative
/// score.
pub fn trajectories_csv(records: &[TrajectoryRecord]) -> String {
    let mut out = String::new();
    if records.is_empty() {
        return out;
    }
    let first = &records[0].steps[0];
    let d_x = first.state.len();
    let d_u = first.control.len();

    let mut header: Vec<String> = vec!["traj_id".into(), "k".into()];
    header.extend((0..d_x).map(|i| format!("x{i}")));
    header.extend((0..d_u).map(|i| format!("u{i}")));
    header.extend((0..d_x).map(|i| format!("xnext{i}")));
    header.push("in_set".into());
    for p in &records[0].predictors {
        header.extend((0..d_x).map(|i| format!("{p}_mean{i}")));
        for i in 0..d_x {
            for j in 0..d_x {
                header.push(format!("{p}_cov{i}{j}"));
            }
        }
        header.push(format!("{p}_score"));
        header.push(format!("{p}_cum_score"));
    }
    out.push_str(&header.join(","));
    out.push('\n');

    for (traj_id, record) in records.iter().enumerate() {
        for step in &record.steps {
            let mut row: Vec<String> = vec![traj_id.to_string(), step.k.to_string()];
            row.extend(step.state.iter().map(|v| fmt_f64(*v)));
            row.extend(step.control.iter().map(|v| fmt_f64(*v)));
            row.extend(step.next_state.iter().map(|v| fmt_f64(*v)));
            row.push((step.in_set as u8).to_string());
            for (idx, pdf) in step.predictions.iter().enumerate() {
                row.extend(pdf.mean.iter().map(|v| fmt_f64(*v)));
                for i in 0..d_x {
                    for j in 0..d_x {
                        row.push(fmt_f64(pdf.covariance.matrix()[(i, j)]));
                    }
                }
                row.push(fmt_f64(step.step_scores[idx]));
                row.push(fmt_f64(step.cum_scores[idx]));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    out
}

/// Per-step aggregate: `k,predictor,mean,p5,p95`.
pub fn summary_csv(summary: &ScoreSummary) -> String {
    let mut out = String::from("k,predictor,mean,p5,p95\n");
    for step in &summary.steps {
        for (idx, stat) in step.stats.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                step.k,
                summary.predictors[idx],
                fmt_f64(stat.mean),
                fmt_f64(stat.p5),
                fmt_f64(stat.p95),
            ));
        }
    }
    out
}

/// Per-step bound columns: `k,upper,lower`.
pub fn bounds_csv(per_step_upper: &[f64], per_step_lower: &[f64]) -> String {
    let mut out = String::from("k,upper,lower\n");
    for (k, (u, l)) in per_step_upper.iter().zip(per_step_lower).enumerate() {
        out.push_str(&format!("{k},{},{}\n", fmt_f64(*u), fmt_f64(*l)));
    }
    out
}

/// JSON-friendly view of a Gaussian pdf.
#[derive(Debug, Clone, Serialize)]
pub struct PdfJson {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl PdfJson {
    pub fn from_pdf(pdf: &GaussianPdf) -> Self {
        Self {
            mean: pdf.mean.iter().copied().collect(),
            covariance: pdf.covariance.to_rows(),
        }
    }
}

/// One emitted confidence ellipse.
#[derive(Debug, Clone, Serialize)]
pub struct EllipseJson {
    pub k: usize,
    pub predictor: String,
    pub center: Vec<f64>,
    pub shape: Vec<Vec<f64>>,
    pub scale: f64,
    pub beta: f64,
    /// The state that materialized after the prediction.
    pub realized_next: Vec<f64>,
}

impl EllipseJson {
    pub fn new(k: usize, predictor: &str, e: &ConfidenceEllipse, realized: &[f64]) -> Self {
        Self {
            k,
            predictor: predictor.to_string(),
            center: e.center.iter().copied().collect(),
            shape: e.shape.to_rows(),
            scale: e.scale,
            beta: e.beta,
            realized_next: realized.to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_round_trips_doubles() {
        for v in [
            0.0,
            -4.04806113073456,
            1.0 / 3.0,
            2.1,
            f64::MIN_POSITIVE,
            -1.2345678901234567e300,
        ] {
            let text = fmt_f64(v);
            let back: f64 = text.parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "{text}");
        }
    }

    #[test]
    fn decimal_separator_is_a_dot() {
        assert!(fmt_f64(1.5).contains('.'));
        assert!(!fmt_f64(12345.678).contains(','));
    }
}
