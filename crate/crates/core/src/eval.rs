//! Validation: splitting, metrics, worst-error tables and the fallback gates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{CQI_MAX, CQI_MIN};
use crate::error::{Error, Result};
use crate::features::{Availability, DeploymentProfile, FeatureMatrix, FeatureSet};
use crate::ingest::SCENARIO;
use crate::models::{ModelKind, TrainedModel};
use crate::table::DataTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    ScenarioBased,
    KFold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train_fraction: f64,
    /// Restricts the held-out tails to these scenarios; empty means all.
    pub holdout_scenarios: Vec<String>,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { mode: SplitMode::ScenarioBased, train_fraction: 0.9, holdout_scenarios: Vec::new(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: DataTable,
    pub validation: DataTable,
    pub train_rows: Vec<usize>,
    pub validation_rows: Vec<usize>,
}

/// Partitions `table` into training and validation rows.
///
/// Scenario mode holds out the last `n_s - round(n_s * train_fraction)` rows of
/// each scenario, keeping both sides temporally contiguous. K-fold mode shuffles
/// with the seed and holds out the first of `round(1 / (1 - train_fraction))` folds.
pub fn scenario_split(table: &DataTable, spec: &SplitSpec) -> Result<Split> {
    let f = spec.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Config(format!("train_fraction {f} must lie in (0, 1)")));
    }
    let n = table.row_count();
    let mut validation_rows = match spec.mode {
        SplitMode::ScenarioBased => {
            let scenario = table.text(SCENARIO)?;
            let mut by_scenario: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, s) in scenario.iter().enumerate() {
                by_scenario.entry(s.as_str()).or_default().push(i);
            }
            for h in &spec.holdout_scenarios {
                if !by_scenario.contains_key(h.as_str()) {
                    return Err(Error::NotFound(format!("holdout scenario `{h}`")));
                }
            }
            let mut out = Vec::new();
            for (name, rows) in &by_scenario {
                if !spec.holdout_scenarios.is_empty() && !spec.holdout_scenarios.iter().any(|h| h == name) {
                    continue;
                }
                let keep = (rows.len() as f64 * f).round() as usize;
                out.extend_from_slice(&rows[keep..]);
            }
            out
        }
        SplitMode::KFold => {
            let folds = ((1.0 / (1.0 - f)).round() as usize).max(2);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
            idx.into_iter().enumerate().filter(|(k, _)| k % folds == 0).map(|(_, i)| i).collect()
        }
    };
    validation_rows.sort_unstable();
    let mut held = vec![false; n];
    for &i in &validation_rows {
        held[i] = true;
    }
    let train_rows: Vec<usize> = (0..n).filter(|&i| !held[i]).collect();
    Ok(Split {
        train: table.select_rows(&train_rows),
        validation: table.select_rows(&validation_rows),
        train_rows,
        validation_rows,
    })
}

fn check_lengths(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Empty("target vector".into()));
    }
    if y.len() != y_hat.len() {
        return Err(Error::Dimension { expected: y.len(), got: y_hat.len() });
    }
    Ok(())
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    let sse: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

/// Mean absolute percentage error, in percent.
pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    let mut acc = 0.0;
    for (i, (a, b)) in y.iter().zip(y_hat).enumerate() {
        if *a == 0.0 {
            return Err(Error::ZeroTarget(i));
        }
        acc += ((a - b) / a).abs();
    }
    Ok(100.0 * acc / y.len() as f64)
}

/// Percentage of rows whose prediction, rounded and clamped to a valid CQI,
/// equals the integer target.
pub fn accuracy(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    let hits = y
        .iter()
        .zip(y_hat)
        .filter(|(a, b)| b.clamp(f64::from(CQI_MIN), f64::from(CQI_MAX)).round() == **a)
        .count();
    Ok(100.0 * hits as f64 / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub row: usize,
    pub actual: f64,
    pub predicted: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
}

impl ErrorTable {
    /// The most frequent actual value among the rows and its share.
    /// Ties go to the smaller value.
    pub fn dominant_actual(&self) -> Option<(f64, f64)> {
        self.dominant_actual_above(0.0)
    }

    /// Like [`Self::dominant_actual`], but only rows with an absolute error of
    /// at least `min_abs_error` are counted. The share is still taken over
    /// all rows.
    pub fn dominant_actual_above(&self, min_abs_error: f64) -> Option<(f64, f64)> {
        let mut counts: Vec<(f64, usize)> = Vec::new();
        for r in self.rows.iter().filter(|r| r.abs_error >= min_abs_error) {
            match counts.iter_mut().find(|(v, _)| *v == r.actual) {
                Some(c) => c.1 += 1,
                None => counts.push((r.actual, 1)),
            }
        }
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.total_cmp(&b.0)));
        counts.first().map(|&(v, c)| (v, c as f64 / self.rows.len() as f64))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:>8} {:>12} {:>10}\n", "Actual", "Predicted", "Error");
        for r in &self.rows {
            let _ = writeln!(s, "{:>8} {:>12.2} {:>10.2}", r.actual, r.predicted, r.abs_error);
        }
        s
    }
}

/// The `n` largest absolute errors, ties broken by row index.
pub fn top_errors(y: &[f64], y_hat: &[f64], n: usize) -> ErrorTable {
    let mut rows: Vec<ErrorRow> = y
        .iter()
        .zip(y_hat)
        .enumerate()
        .map(|(row, (&actual, &predicted))| ErrorRow { row, actual, predicted, abs_error: (predicted - actual).abs() })
        .collect();
    rows.sort_by(|a, b| b.abs_error.total_cmp(&a.abs_error).then(a.row.cmp(&b.row)));
    rows.truncate(n);
    ErrorTable { rows }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse_raw: f64,
    /// `rmse_raw / 15`.
    pub rmse_normalized: f64,
    pub mape_percent: f64,
    pub accuracy_percent: f64,
    pub n: usize,
}

impl MetricsReport {
    pub fn compute(y: &[f64], y_hat: &[f64]) -> Result<Self> {
        let rmse_raw = rmse(y, y_hat)?;
        Ok(Self {
            rmse_raw,
            rmse_normalized: rmse_raw / f64::from(CQI_MAX),
            mape_percent: mape(y, y_hat)?,
            accuracy_percent: accuracy(y, y_hat)?,
            n: y.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum GateVerdict {
    Accept,
    /// Worst errors concentrate on one target value: clean the data again.
    FallbackPhase2 { model_id: String, actual: f64, share: f64 },
    /// The model reads metrics the deployment cannot provide.
    FallbackPhase1 { profile: String, violations: Vec<String> },
}

impl GateVerdict {
    pub fn name(&self) -> &'static str {
        match self {
            GateVerdict::Accept => "accept",
            GateVerdict::FallbackPhase2 { .. } => "fallback_phase2",
            GateVerdict::FallbackPhase1 { .. } => "fallback_phase1",
        }
    }

    pub fn is_accept(&self) -> bool {
        matches!(self, GateVerdict::Accept)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub top_n: usize,
    /// Share of the top errors that must sit on one actual value to trigger.
    pub concentration: f64,
    /// Top errors smaller than this are treated as quantization noise and
    /// do not count toward the concentration.
    pub min_abs_error: f64,
    /// Model whose worst errors are inspected; defaults to the first one.
    pub reference_model: Option<String>,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self { top_n: 10, concentration: 0.5, min_abs_error: 1.0, reference_model: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub model_id: String,
    pub kind: ModelKind,
    pub metrics: MetricsReport,
    pub top_errors: ErrorTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub profile: String,
    pub evaluations: Vec<ModelEvaluation>,
    pub availability: Availability,
    pub verdict: GateVerdict,
}

impl ComparisonReport {
    pub fn to_text(&self) -> String {
        metrics_table(self.evaluations.iter().map(|e| (e.model_id.as_str(), &e.metrics)))
    }
}

/// Aligned text table with RMSE, MAPE and accuracy columns.
pub fn metrics_table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MetricsReport)>) -> String {
    let rows: Vec<_> = rows.into_iter().collect();
    let w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut s = format!(
        "{:<w$}  {:>8}  {:>10}  {:>8}  {:>12}\n",
        "Model", "RMSE", "RMSE (raw)", "MAPE (%)", "Accuracy (%)"
    );
    for (name, m) in rows {
        let _ = writeln!(
            s,
            "{:<w$}  {:>8.3}  {:>10.3}  {:>8.2}  {:>12.2}",
            name, m.rmse_normalized, m.rmse_raw, m.mape_percent, m.accuracy_percent
        );
    }
    s
}

/// Evaluates every model on the validation matrix and applies the gates.
/// An availability failure takes precedence over the error-concentration gate.
pub fn compare_models(
    models: &[(String, &TrainedModel)],
    validation: &FeatureMatrix,
    feature_set: &FeatureSet,
    profile: &DeploymentProfile,
    gate: &GateConfig,
) -> Result<ComparisonReport> {
    if models.is_empty() {
        return Err(Error::Empty("model list".into()));
    }
    let mut evaluations = Vec::with_capacity(models.len());
    for (id, m) in models {
        let y_hat = m.predict_matrix(validation)?;
        evaluations.push(ModelEvaluation {
            model_id: id.clone(),
            kind: m.kind(),
            metrics: MetricsReport::compute(&validation.target, &y_hat)?,
            top_errors: top_errors(&validation.target, &y_hat, gate.top_n),
        });
    }
    let availability = profile.check(feature_set);
    let reference = match &gate.reference_model {
        Some(r) => evaluations
            .iter()
            .find(|e| &e.model_id == r)
            .ok_or_else(|| Error::NotFound(format!("reference model `{r}`")))?,
        None => &evaluations[0],
    };
    let full = reference.top_errors.rows.len() >= gate.top_n.min(validation.rows);
    let verdict = match (&availability, reference.top_errors.dominant_actual_above(gate.min_abs_error.max(f64::MIN_POSITIVE))) {
        (Availability::Violations(v), _) => {
            GateVerdict::FallbackPhase1 { profile: profile.name.clone(), violations: v.clone() }
        }
        (Availability::Pass, Some((actual, share))) if full && share >= gate.concentration => {
            GateVerdict::FallbackPhase2 { model_id: reference.model_id.clone(), actual, share }
        }
        _ => GateVerdict::Accept,
    };
    Ok(ComparisonReport { profile: profile.name.clone(), evaluations, availability, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_metrics() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(mape(&[10.0], &[9.0]).unwrap(), 10.0);
        assert_eq!(mape(&[4.0, 8.0], &[5.0, 6.0]).unwrap(), 25.0);
        assert_eq!(accuracy(&[7.0], &[7.49]).unwrap(), 100.0);
        assert_eq!(accuracy(&[7.0], &[7.51]).unwrap(), 0.0);
        assert_eq!(accuracy(&[3.0, 3.0], &[14.17, 3.2]).unwrap(), 50.0);
        assert!(matches!(mape(&[0.0], &[1.0]), Err(Error::ZeroTarget(0))));
        assert!(matches!(rmse(&[], &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn top_errors_order_and_truncation() {
        let y = [3.0, 5.0, 7.0];
        let t = top_errors(&y, &[4.0, 5.0, 6.0], 10);
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows.iter().map(|r| r.row).collect::<Vec<_>>(), vec![0, 2, 1]);
        assert!(top_errors(&y, &y, 2).rows.iter().all(|r| r.abs_error == 0.0));
    }

    #[test]
    fn split_partitions_rows() {
        let mut t = DataTable::new();
        let scen: Vec<String> = (0..100).map(|i| if i < 60 { "a".into() } else { "b".into() }).collect();
        t.push_text(SCENARIO, scen).unwrap();
        t.push_numeric("x", (0..100).map(f64::from).collect()).unwrap();
        let s = scenario_split(&t, &SplitSpec::default()).unwrap();
        assert_eq!(s.validation_rows, vec![54, 55, 56, 57, 58, 59, 96, 97, 98, 99]);
        assert_eq!(s.train.row_count() + s.validation.row_count(), 100);
        let bad = SplitSpec { train_fraction: 1.0, ..SplitSpec::default() };
        assert!(scenario_split(&t, &bad).is_err());
        let unknown = SplitSpec { holdout_scenarios: vec!["zzz".into()], ..SplitSpec::default() };
        assert!(matches!(scenario_split(&t, &unknown), Err(Error::NotFound(_))));
        let kf = scenario_split(&t, &SplitSpec { mode: SplitMode::KFold, ..SplitSpec::default() }).unwrap();
        assert_eq!(kf.validation_rows.len(), 10);
    }

    #[test]
    fn dominant_actual_share() {
        let y = [3.0, 3.0, 9.0, 3.0];
        let t = top_errors(&y, &[14.0, 13.0, 1.0, 12.0], 4);
        assert_eq!(t.dominant_actual(), Some((3.0, 0.75)));
        // Only the 11- and 10-step misses count at a floor of 10.
        assert_eq!(t.dominant_actual_above(10.0), Some((3.0, 0.5)));
        assert_eq!(t.dominant_actual_above(20.0), None);
    }
}
