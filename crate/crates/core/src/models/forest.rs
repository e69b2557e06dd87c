use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow_tree, Columns, DecisionTree, TreeParams};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub tree_count: usize,
    /// Features tried per split; `None` means ⌈p/3⌉.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { tree_count: 100, mtry: None, min_leaf: 2, max_depth: None, bootstrap: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub tree_seeds: Vec<u64>,
    pub mtry: usize,
    pub n_features: usize,
}

impl ForestModel {
    /// Mean of the per-tree outputs.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }
}

/// SplitMix64 step; derives independent per-tree seeds from one seed.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Bagged regression trees. Each tree draws its bootstrap sample and its
/// per-node feature subsets from its own seed, so the result does not depend
/// on how trees are scheduled across threads.
pub fn train_random_forest(x: &FeatureMatrix, cfg: &ForestConfig, seed: u64) -> Result<ForestModel> {
    if x.rows < 2 {
        return Err(Error::InsufficientData("forest needs at least 2 rows".into()));
    }
    if cfg.tree_count == 0 {
        return Err(Error::Config("forest tree_count must be >= 1".into()));
    }
    let p = x.cols();
    let mtry = cfg.mtry.unwrap_or(p.div_ceil(3)).clamp(1, p.max(1));
    let params = TreeParams { max_depth: cfg.max_depth, min_leaf: cfg.min_leaf.max(1), mtry: Some(mtry) };
    let data = Columns::new(x, &x.target);
    let n = x.rows;
    let tree_seeds: Vec<u64> = (0..cfg.tree_count as u64).map(|i| splitmix64(seed ^ splitmix64(i))).collect();
    let trees = tree_seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let rows: Vec<usize> =
                if cfg.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
            grow_tree(&data, &x.target, rows, &params, &mut rng)
        })
        .collect();
    Ok(ForestModel { trees, tree_seeds, mtry, n_features: p })
}
