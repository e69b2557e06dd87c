//! The bundled scripted scenarios and the models the loop runs with them.

use serde::{Deserialize, Serialize};

use crate::anomaly::{kmeans_fit, summarize_window, AnomalyKind, ClusterModel, Window};
use crate::error::{Error, Result};
use crate::features::{expand_polynomial, FeatureSet};
use crate::ingest::{records_to_table, MonitoringRecord, TARGET};
use crate::models::{train_gbt, train_lasso, GbtConfig, LinearConfig, ModelArtifact, ModelKind, TrainedModel};
use crate::preprocess::{fit_normalization, normalize};

use super::control::{predict_step, DeployedModel, PredictOutcome};
use super::env::{EnvConfig, ScenarioScript};
use super::run::{run_loop, Controller, LoopConfig, LoopModels};
use super::MonitoringLevel;

pub const ENV_JSON: &str = include_str!("../../fixtures/pcs/env.json");
pub const LOOP_JSON: &str = include_str!("../../fixtures/pcs/loop.json");
pub const MIE_JSON: &str = include_str!("../../fixtures/pcs/mie.json");
pub const BENIGN_JSON: &str = include_str!("../../fixtures/pcs/benign.json");
pub const ROUTE_SHIFT_JSON: &str = include_str!("../../fixtures/pcs/route_shift.json");
pub const DEMAND_DROP_JSON: &str = include_str!("../../fixtures/pcs/demand_drop.json");

pub const NORMAL_MODEL_ID: &str = "runtime-normal";
pub const EMERGENCY_MODEL_ID: &str = "runtime-emergency";

pub fn env() -> EnvConfig {
    serde_json::from_str(ENV_JSON).expect("bundled env fixture parses")
}

pub fn loop_config(controller: Controller) -> LoopConfig {
    let cfg: LoopConfig = serde_json::from_str(LOOP_JSON).expect("bundled loop fixture parses");
    match controller {
        Controller::Proactive => cfg,
        Controller::Reactive => LoopConfig { controller, reserve_margin_prbs: 0, ..cfg },
    }
}

pub fn script(name: &str) -> Option<ScenarioScript> {
    let json = match name {
        "mie" => MIE_JSON,
        "benign" => BENIGN_JSON,
        "route_shift" => ROUTE_SHIFT_JSON,
        "demand_drop" => DEMAND_DROP_JSON,
        _ => return None,
    };
    Some(ScenarioScript::from_json(json).expect("bundled script parses"))
}

/// Fine-level records from a reactive run of `script`.
pub fn collect_records(env: &EnvConfig, script: &ScenarioScript, seed: u64, ticks: u64) -> Result<Vec<MonitoringRecord>> {
    let cfg = LoopConfig {
        initial_level: MonitoringLevel::Fine,
        keep_records: true,
        ..LoopConfig::reactive()
    };
    Ok(run_loop(env, script, &cfg, &LoopModels::default(), seed, ticks, None)?.records)
}

/// Fits a model on monitoring records with the given base metrics, scaled to
/// [0, 1] with ranges from these records.
pub fn fit_deployed_model(id: &str, records: &[MonitoringRecord], bases: &[&str], kind: ModelKind) -> Result<DeployedModel> {
    let table = records_to_table(records)?;
    let mut fs = FeatureSet::from_bases(format!("fs-{id}"), TARGET, bases);
    fs.normalization = fit_normalization(&table, &fs.base_features)?;
    let (scaled, _) = normalize(&table, Some(&fs.normalization))?;
    let x = expand_polynomial(&scaled, &fs)?;
    let model = match kind {
        ModelKind::Lasso => TrainedModel::Lasso(train_lasso(&x, &LinearConfig { l1_penalty: 1e-4, ..LinearConfig::default() }, None)?),
        ModelKind::Gbt => TrainedModel::Gbt(train_gbt(&x, &GbtConfig::default())?),
        other => return Err(Error::Config(format!("runtime models are lasso or gbt, not {}", other.as_str()))),
    };
    Ok(DeployedModel {
        artifact: ModelArtifact {
            id: id.to_string(),
            feature_set_id: fs.id.clone(),
            feature_names: fs.expanded_names(),
            model,
        },
        feature_set: fs,
    })
}

/// Summaries of the windows starting at or after `from_tick`, with the
/// model's predictions, for at most `max_windows` windows.
pub fn windows_after(
    records: &[MonitoringRecord],
    model: &DeployedModel,
    tick_ms: u64,
    window_ticks: u64,
    from_tick: u64,
    max_windows: usize,
) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    let mut start = from_tick;
    while out.len() < max_windows {
        let chunk: Vec<MonitoringRecord> = records
            .iter()
            .filter(|r| {
                let t = r.timestamp_ms / tick_ms;
                t >= start && t < start + window_ticks
            })
            .cloned()
            .collect();
        if chunk.is_empty() {
            break;
        }
        let preds: Vec<Option<f64>> = match predict_step(model, &chunk, MonitoringLevel::Fine)? {
            PredictOutcome::Predictions(p) => p.into_iter().map(|c| Some(f64::from(c))).collect(),
            PredictOutcome::Unavailable(v) => return Err(Error::Config(format!("model cannot read {v:?}"))),
        };
        out.push(summarize_window(&chunk, &preds, tick_ms)?);
        start += window_ticks;
    }
    Ok(out)
}

/// Normal and emergency predictors plus the labeled cluster model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeModels {
    pub normal: DeployedModel,
    pub emergency: DeployedModel,
    pub clusters: ClusterModel,
}

impl RuntimeModels {
    pub fn loop_models(&self) -> LoopModels {
        LoopModels {
            registry: [
                (self.normal.id().to_string(), self.normal.clone()),
                (self.emergency.id().to_string(), self.emergency.clone()),
            ]
            .into_iter()
            .collect(),
            active: Some(self.normal.id().to_string()),
            clusters: Some(self.clusters.clone()),
        }
    }
}

/// Trains the runtime models from scripted test traffic.
///
/// The normal model sees only distance-driven metrics, so a load surge shows
/// up as residual error; the emergency model also reads the cell load. The
/// cluster model is fitted on windows following each labeled scripted event.
pub fn train_runtime_models(env: &EnvConfig, window_ticks: u64, seed: u64) -> Result<RuntimeModels> {
    train_runtime_models_k(env, window_ticks, 3, seed)
}

/// [`train_runtime_models`] with `k` clusters. A cluster that no labeled
/// window reaches is labeled unknown.
pub fn train_runtime_models_k(env: &EnvConfig, window_ticks: u64, k: usize, seed: u64) -> Result<RuntimeModels> {
    const TICKS: u64 = 300;
    const EVENT_TICK: u64 = 100;
    const LABEL_WINDOWS: usize = 8;
    let benign = script("benign").expect("bundled");
    let mie = script("mie").expect("bundled");
    let normal_records = collect_records(env, &benign, seed, TICKS)?;
    let normal = fit_deployed_model(NORMAL_MODEL_ID, &normal_records, &["rsrp", "phr"], ModelKind::Lasso)?;
    let mut surge_records = collect_records(env, &mie, seed.wrapping_add(1), TICKS)?;
    surge_records.extend(normal_records);
    let emergency =
        fit_deployed_model(EMERGENCY_MODEL_ID, &surge_records, &["rsrp", "phr", "cell_load"], ModelKind::Lasso)?;

    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (name, kind) in [
        ("mie", AnomalyKind::MieSurge),
        ("route_shift", AnomalyKind::RouteShift),
        ("demand_drop", AnomalyKind::DemandDrop),
    ] {
        let sc = script(name).expect("bundled");
        for rep in 0..3u64 {
            let recs = collect_records(env, &sc, seed.wrapping_add(10 + rep), EVENT_TICK + window_ticks * LABEL_WINDOWS as u64)?;
            for w in windows_after(&recs, &normal, env.tick_ms, window_ticks, EVENT_TICK, LABEL_WINDOWS)? {
                points.push(w.summary);
                labels.push(kind);
            }
        }
    }
    let mut clusters = kmeans_fit(&points, k, seed)?;
    clusters.label(&points, &labels)?;
    clusters.set_recommended_model(AnomalyKind::MieSurge, EMERGENCY_MODEL_ID);
    Ok(RuntimeModels { normal, emergency, clusters })
}
