//! Regressors for wbCQI and their serialized artifact form.

mod combined;
mod forest;
mod gbt;
mod linear;
mod tree;

use serde::{Deserialize, Serialize};

pub use combined::{blend, for_each_composition, search_combined_weights, CombinedModel, WeightSearch};
pub use forest::{splitmix64, train_random_forest, ForestConfig, ForestModel};
pub use gbt::{train_gbt, GbtConfig, GbtModel};
pub use linear::{
    coordinate_descent, log_grid, train_elasticnet, train_lasso, CdFit, Design, LinearConfig, LinearModel,
    Standardization,
};
pub use tree::{grow_tree, Columns, DecisionTree, Node, TreeParams};

use crate::channel::{CQI_MAX, CQI_MIN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lasso,
    Elasticnet,
    Forest,
    Gbt,
    Combined,
}

impl ModelKind {
    pub const BASE: [ModelKind; 4] = [ModelKind::Lasso, ModelKind::Elasticnet, ModelKind::Forest, ModelKind::Gbt];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lasso => "lasso",
            ModelKind::Elasticnet => "elasticnet",
            ModelKind::Forest => "forest",
            ModelKind::Gbt => "gbt",
            ModelKind::Combined => "combined",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lasso" => Some(ModelKind::Lasso),
            "enet" | "elasticnet" | "elastic_net" => Some(ModelKind::Elasticnet),
            "forest" | "rf" => Some(ModelKind::Forest),
            "gbt" | "xgboost" => Some(ModelKind::Gbt),
            "combined" => Some(ModelKind::Combined),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub lasso: LinearConfig,
    pub elasticnet: LinearConfig,
    pub forest: ForestConfig,
    pub gbt: GbtConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lasso: LinearConfig::default(),
            elasticnet: LinearConfig { l1_penalty: 5e-4, l2_penalty: 5e-4, ..LinearConfig::default() },
            forest: ForestConfig::default(),
            gbt: GbtConfig::default(),
        }
    }
}

/// Any trained regressor; immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum TrainedModel {
    Lasso(LinearModel),
    Elasticnet(LinearModel),
    Forest(ForestModel),
    Gbt(GbtModel),
    Combined(Box<CombinedModel>),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Lasso(_) => ModelKind::Lasso,
            TrainedModel::Elasticnet(_) => ModelKind::Elasticnet,
            TrainedModel::Forest(_) => ModelKind::Forest,
            TrainedModel::Gbt(_) => ModelKind::Gbt,
            TrainedModel::Combined(_) => ModelKind::Combined,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainedModel::Lasso(m) | TrainedModel::Elasticnet(m) => m.n_features(),
            TrainedModel::Forest(m) => m.n_features,
            TrainedModel::Gbt(m) => m.n_features,
            TrainedModel::Combined(m) => m.gbt.n_features,
        }
    }

    /// Raw regression output for one expanded feature vector.
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        let p = self.n_features();
        if row.len() != p {
            return Err(Error::Dimension { expected: p, got: row.len() });
        }
        Ok(match self {
            TrainedModel::Lasso(m) | TrainedModel::Elasticnet(m) => m.predict_row(row),
            TrainedModel::Forest(m) => m.predict_row(row),
            TrainedModel::Gbt(m) => m.predict_row(row),
            TrainedModel::Combined(m) => m.predict_row(row),
        })
    }

    /// Prediction rounded and clamped to a reportable CQI.
    pub fn predict_cqi(&self, row: &[f64]) -> Result<u8> {
        Ok(to_cqi(self.predict(row)?))
    }

    pub fn predict_matrix(&self, x: &crate::features::FeatureMatrix) -> Result<Vec<f64>> {
        (0..x.rows).map(|i| self.predict(x.row(i))).collect()
    }
}

pub fn to_cqi(y: f64) -> u8 {
    y.clamp(f64::from(CQI_MIN), f64::from(CQI_MAX)).round() as u8
}

/// Self-describing JSON form of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub id: String,
    pub feature_set_id: String,
    pub feature_names: Vec<String>,
    pub model: TrainedModel,
}

impl ModelArtifact {
    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_mismatch_rejected() {
        let m = TrainedModel::Gbt(GbtModel {
            base_prediction: 1.0,
            trees: vec![],
            learning_rate: 0.1,
            max_depth: Some(3),
            n_features: 3,
            stage_rmse: vec![],
        });
        assert!(matches!(m.predict(&[1.0]), Err(Error::Dimension { expected: 3, got: 1 })));
        assert_eq!(m.predict(&[0.0; 3]).unwrap(), 1.0);
    }

    #[test]
    fn cqi_conversion_rounds_and_clamps() {
        assert_eq!(to_cqi(7.49), 7);
        assert_eq!(to_cqi(7.5), 8);
        assert_eq!(to_cqi(-3.0), 1);
        assert_eq!(to_cqi(22.0), 15);
    }

    #[test]
    fn kind_names_parse() {
        for k in ModelKind::BASE {
            assert_eq!(ModelKind::parse(k.as_str()), Some(k));
        }
        assert_eq!(ModelKind::parse("enet"), Some(ModelKind::Elasticnet));
    }
}
