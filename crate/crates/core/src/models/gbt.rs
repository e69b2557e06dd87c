use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow_tree, Columns, DecisionTree, TreeParams};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtConfig {
    pub learning_rate: f64,
    /// `None` grows each stage tree without a depth bound.
    pub max_depth: Option<usize>,
    pub tree_count: usize,
    pub min_leaf: usize,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, max_depth: Some(3), tree_count: 100, min_leaf: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    /// Training-target mean.
    pub base_prediction: f64,
    pub trees: Vec<DecisionTree>,
    pub learning_rate: f64,
    pub max_depth: Option<usize>,
    pub n_features: usize,
    /// Training RMSE after the base model and after each stage.
    pub stage_rmse: Vec<f64>,
}

impl GbtModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.base_prediction + self.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }
}

fn rmse(res: &[f64]) -> f64 {
    (res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64).sqrt()
}

/// First-order gradient boosting with squared loss: each stage fits a
/// depth-bounded tree to the current residuals and is added with shrinkage.
pub fn train_gbt(x: &FeatureMatrix, cfg: &GbtConfig) -> Result<GbtModel> {
    if x.rows < 2 {
        return Err(Error::InsufficientData("boosting needs at least 2 rows".into()));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate <= 1.0) {
        return Err(Error::Config("learning_rate must lie in (0, 1]".into()));
    }
    let n = x.rows;
    let base = x.target.iter().sum::<f64>() / n as f64;
    let mut fitted = vec![base; n];
    let mut residual: Vec<f64> = x.target.iter().map(|y| y - base).collect();
    let params = TreeParams { max_depth: cfg.max_depth, min_leaf: cfg.min_leaf.max(1), mtry: None };
    let data = Columns::new(x, &x.target);
    // no feature sampling, so the rng is never drawn from
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut trees = Vec::with_capacity(cfg.tree_count);
    let mut stage_rmse = vec![rmse(&residual)];
    for _ in 0..cfg.tree_count {
        let tree = grow_tree(&data, &residual, (0..n).collect(), &params, &mut rng);
        for i in 0..n {
            fitted[i] += cfg.learning_rate * tree.predict_row(x.row(i));
            residual[i] = x.target[i] - fitted[i];
        }
        stage_rmse.push(rmse(&residual));
        trees.push(tree);
    }
    Ok(GbtModel {
        base_prediction: base,
        trees,
        learning_rate: cfg.learning_rate,
        max_depth: cfg.max_depth,
        n_features: x.cols(),
        stage_rmse,
    })
}
