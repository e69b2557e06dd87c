//! Offline workflow: clean a trace, engineer features, train the four
//! regressors, search the combination weights and evaluate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{compare_models, scenario_split, ComparisonReport, GateConfig, SplitSpec};
use crate::features::{
    correlation_matrix, default_exclusions, expand_polynomial, select_features, CorrelationMethod, DeploymentProfile,
    Exclusion, FeatureMatrix, FeatureSet,
};
use crate::ingest::{TARGET, TIMESTAMP};
use crate::kb::sha256_hex;
use crate::models::{
    search_combined_weights, train_elasticnet, train_gbt, train_lasso, train_random_forest, CombinedModel,
    ModelArtifact, ModelKind, TrainConfig, TrainedModel, WeightSearch,
};
use crate::preprocess::{
    add_relative_timestamps, fit_normalization, normalize, prune_static_fields_except, repair_target_spikes,
    repair_values, DetectorConfig, RepairReport, SpikeConfig, DT_MS,
};
use crate::table::DataTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Range detectors applied to metric columns before target repair.
    pub detectors: BTreeMap<String, DetectorConfig>,
    /// Skip to keep corrupted target values (used to demonstrate the gate).
    pub repair_target: bool,
    pub spikes: SpikeConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            detectors: [
                ("rsrp".to_string(), DetectorConfig::range(-156.0, 0.0)),
                ("rsrq".to_string(), DetectorConfig::range(-34.0, 2.5)),
            ]
            .into_iter()
            .collect(),
            repair_target: true,
            spikes: SpikeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOutput {
    pub table: DataTable,
    pub pruned: Vec<String>,
    pub report: RepairReport,
}

/// Adds relative timestamps, drops static fields, repairs invalid metric
/// values and, unless disabled, the target spikes.
pub fn preprocess_table(raw: &DataTable, cfg: &PreprocessConfig) -> Result<PreprocessOutput> {
    let t = add_relative_timestamps(raw)?;
    let (mut t, pruned) = prune_static_fields_except(&t, &[TARGET, TIMESTAMP, DT_MS]);
    let mut report = RepairReport::default();
    for (col, det) in &cfg.detectors {
        if !t.has_column(col) {
            continue;
        }
        let (next, r) = repair_values(&t, col, det)?;
        t = next;
        report = report.merge(r);
    }
    if cfg.repair_target {
        let (next, r) = repair_target_spikes(&t, TARGET, &cfg.spikes)?;
        t = next;
        report = report.merge(r);
    }
    Ok(PreprocessOutput { table: t, pruned, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub method: CorrelationMethod,
    pub top_k: usize,
    pub exclusions: Vec<Exclusion>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { method: CorrelationMethod::Pearson, top_k: 15, exclusions: default_exclusions() }
    }
}

/// Columns that are bookkeeping rather than measurements.
const NON_FEATURES: [&str; 2] = [TIMESTAMP, DT_MS];

/// Ranks metrics on the training rows, fits the feature scaling there and
/// expands both sides of the split.
pub fn build_features(
    train: &DataTable,
    validation: &DataTable,
    cfg: &FeatureConfig,
) -> Result<(FeatureSet, FeatureMatrix, FeatureMatrix)> {
    let candidates: Vec<String> =
        train.numeric_names().into_iter().filter(|n| !NON_FEATURES.contains(&n.as_str())).collect();
    let names: Vec<&str> = candidates.iter().map(String::as_str).collect();
    let corr = correlation_matrix(&train.project(&names)?, cfg.method)?;
    let k = cfg.top_k.min(candidates.len().saturating_sub(1 + cfg.exclusions.iter().filter(|e| candidates.contains(&e.name)).count()));
    let mut fs = select_features(&corr, TARGET, k, &cfg.exclusions)?;
    fs.normalization = fit_normalization(train, &fs.base_features)?;
    let (tr, _) = normalize(train, Some(&fs.normalization))?;
    let (va, _) = normalize(validation, Some(&fs.normalization))?;
    let xt = expand_polynomial(&tr, &fs)?;
    let xv = expand_polynomial(&va, &fs)?;
    Ok((fs, xt, xv))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedSet {
    pub lasso: ModelArtifact,
    pub elasticnet: ModelArtifact,
    pub forest: ModelArtifact,
    pub gbt: ModelArtifact,
}

impl TrainedSet {
    pub fn all(&self) -> [&ModelArtifact; 4] {
        [&self.lasso, &self.elasticnet, &self.forest, &self.gbt]
    }
}

fn artifact(kind: ModelKind, fs: &FeatureSet, model: TrainedModel) -> ModelArtifact {
    ModelArtifact {
        id: kind.as_str().to_string(),
        feature_set_id: fs.id.clone(),
        feature_names: fs.expanded_names(),
        model,
    }
}

/// Trains one base model. With a validation matrix the linear models pick
/// their penalty from the configured grid by validation RMSE.
pub fn train_one(
    kind: ModelKind,
    x: &FeatureMatrix,
    validation: Option<&FeatureMatrix>,
    fs: &FeatureSet,
    cfg: &TrainConfig,
) -> Result<ModelArtifact> {
    let model = match kind {
        ModelKind::Lasso => TrainedModel::Lasso(train_lasso(x, &cfg.lasso, validation)?),
        ModelKind::Elasticnet => TrainedModel::Elasticnet(train_elasticnet(x, &cfg.elasticnet, validation)?),
        ModelKind::Forest => TrainedModel::Forest(train_random_forest(x, &cfg.forest, cfg.seed)?),
        ModelKind::Gbt => TrainedModel::Gbt(train_gbt(x, &cfg.gbt)?),
        ModelKind::Combined => {
            return Err(crate::Error::Config("the combined model is built by the weight search".into()))
        }
    };
    Ok(artifact(kind, fs, model))
}

pub fn train_all(
    x: &FeatureMatrix,
    validation: Option<&FeatureMatrix>,
    fs: &FeatureSet,
    cfg: &TrainConfig,
) -> Result<TrainedSet> {
    Ok(TrainedSet {
        lasso: train_one(ModelKind::Lasso, x, validation, fs, cfg)?,
        elasticnet: train_one(ModelKind::Elasticnet, x, validation, fs, cfg)?,
        forest: train_one(ModelKind::Forest, x, None, fs, cfg)?,
        gbt: train_one(ModelKind::Gbt, x, None, fs, cfg)?,
    })
}

/// Searches the blend weights on the validation matrix and assembles the
/// combined model.
pub fn combine(set: &TrainedSet, validation: &FeatureMatrix, step: u32) -> Result<(ModelArtifact, WeightSearch)> {
    let preds: Vec<Vec<f64>> =
        set.all().iter().map(|a| a.model.predict_matrix(validation)).collect::<Result<_>>()?;
    let search = search_combined_weights(&preds, &validation.target, step)?;
    let unwrap_linear = |a: &ModelArtifact| match &a.model {
        TrainedModel::Lasso(m) | TrainedModel::Elasticnet(m) => m.clone(),
        _ => unreachable!("linear slot holds a linear model"),
    };
    let forest = match &set.forest.model {
        TrainedModel::Forest(m) => m.clone(),
        _ => unreachable!("forest slot holds a forest"),
    };
    let gbt = match &set.gbt.model {
        TrainedModel::Gbt(m) => m.clone(),
        _ => unreachable!("gbt slot holds a gbt"),
    };
    let w = &search.weights;
    let combined = CombinedModel::new(
        unwrap_linear(&set.lasso),
        unwrap_linear(&set.elasticnet),
        forest,
        gbt,
        [w[0], w[1], w[2], w[3]],
    )?;
    let art = ModelArtifact {
        id: ModelKind::Combined.as_str().to_string(),
        feature_set_id: set.gbt.feature_set_id.clone(),
        feature_names: set.gbt.feature_names.clone(),
        model: TrainedModel::Combined(Box::new(combined)),
    };
    Ok((art, search))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub split: SplitSpec,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub weight_step: u32,
    /// Choose the linear penalties from their grids by validation RMSE.
    pub select_penalty: bool,
    pub profile: String,
    pub gate: GateConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            split: SplitSpec::default(),
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            weight_step: 1,
            select_penalty: true,
            profile: "full".into(),
            gate: GateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub processed: PreprocessOutput,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub feature_set: FeatureSet,
    pub models: TrainedSet,
    pub combined: ModelArtifact,
    pub weights: WeightSearch,
    pub report: ComparisonReport,
    /// SHA-256 of every artifact, by name.
    pub checksums: BTreeMap<String, String>,
}

/// Runs the whole offline workflow on a raw trace.
pub fn run_pipeline(raw: &DataTable, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let processed = preprocess_table(raw, &cfg.preprocess)?;
    let split = scenario_split(&processed.table, &cfg.split)?;
    let (fs, xt, xv) = build_features(&split.train, &split.validation, &cfg.features)?;
    let models = train_all(&xt, cfg.select_penalty.then_some(&xv), &fs, &cfg.train)?;
    let (combined, weights) = combine(&models, &xv, cfg.weight_step)?;
    let profile = DeploymentProfile::by_name(&cfg.profile)
        .ok_or_else(|| crate::Error::Config(format!("unknown deployment profile `{}`", cfg.profile)))?;
    let listed: Vec<(String, &TrainedModel)> = models
        .all()
        .into_iter()
        .chain(std::iter::once(&combined))
        .map(|a| (a.id.clone(), &a.model))
        .collect();
    let report = compare_models(&listed, &xv, &fs, &profile, &cfg.gate)?;

    let mut checksums = BTreeMap::new();
    checksums.insert("processed.csv".to_string(), sha256_hex(&processed.table.to_csv_bytes()?));
    checksums.insert("feature_set.json".to_string(), sha256_hex(serde_json::to_string(&fs)?.as_bytes()));
    for a in models.all().into_iter().chain(std::iter::once(&combined)) {
        checksums.insert(format!("models/{}.json", a.id), sha256_hex(a.to_json()?.as_bytes()));
    }
    checksums.insert("report.json".to_string(), sha256_hex(serde_json::to_string(&report)?.as_bytes()));
    Ok(PipelineOutput {
        processed,
        train_rows: split.train_rows.len(),
        validation_rows: split.validation_rows.len(),
        feature_set: fs,
        models,
        combined,
        weights,
        report,
        checksums,
    })
}
