//! Squared-error regression trees shared by the forest and the booster.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
}

impl DecisionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Candidate features per node; `None` uses all.
    pub mtry: Option<usize>,
}

/// Column-major view of a design, built once and shared across trees.
pub struct Columns<'a> {
    pub cols: Vec<Vec<f64>>,
    pub target: &'a [f64],
}

impl<'a> Columns<'a> {
    pub fn new(x: &crate::features::FeatureMatrix, target: &'a [f64]) -> Self {
        Self { cols: (0..x.cols()).map(|j| x.column(j)).collect(), target }
    }
}

struct Best {
    feature: usize,
    threshold: f64,
    gain: f64,
    split_at: usize,
    order: Vec<usize>,
}

/// Grows a tree on `rows` (duplicates allowed, as from a bootstrap draw).
///
/// Splits minimize squared error; candidates are scanned by ascending feature
/// index then ascending threshold and only a strictly better split replaces
/// the incumbent. Thresholds sit midway between adjacent distinct values.
pub fn grow_tree<R: Rng>(data: &Columns<'_>, y: &[f64], rows: Vec<usize>, params: &TreeParams, rng: &mut R) -> DecisionTree {
    let p = data.cols.len();
    let min_leaf = params.min_leaf.max(1);
    let mut nodes: Vec<Node> = Vec::new();
    // (node slot, rows, depth)
    let mut stack = vec![(0usize, rows, 0usize)];
    nodes.push(Node::Leaf { value: 0.0 });

    while let Some((slot, idx, depth)) = stack.pop() {
        let m = idx.len();
        let sum: f64 = idx.iter().map(|&i| y[i]).sum();
        let mean = if m == 0 { 0.0 } else { sum / m as f64 };
        let constant = idx.iter().all(|&i| y[i] == y[idx[0]]);
        if m < 2 * min_leaf || constant || params.max_depth.is_some_and(|d| depth >= d) {
            nodes[slot] = Node::Leaf { value: if constant && m > 0 { y[idx[0]] } else { mean } };
            continue;
        }

        let features: Vec<usize> = match params.mtry {
            Some(k) if k < p => {
                let mut f = sample(rng, p, k.max(1)).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        };

        let mut best: Option<Best> = None;
        for &f in &features {
            let col = &data.cols[f];
            let mut order = idx.clone();
            order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            let mut left_sum = 0.0;
            for s in 1..m {
                left_sum += y[order[s - 1]];
                if s < min_leaf || m - s < min_leaf {
                    continue;
                }
                let (lo, hi) = (col[order[s - 1]], col[order[s]]);
                if lo >= hi {
                    continue;
                }
                let right_sum = sum - left_sum;
                let gain = left_sum * left_sum / s as f64 + right_sum * right_sum / (m - s) as f64;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let threshold = lo + (hi - lo) / 2.0;
                    best = Some(Best { feature: f, threshold, gain, split_at: s, order: Vec::new() });
                }
            }
            if let Some(b) = best.as_mut() {
                if b.feature == f && b.order.is_empty() {
                    b.order = order;
                }
            }
        }

        match best {
            None => nodes[slot] = Node::Leaf { value: mean },
            Some(b) => {
                let mut order = b.order;
                let right_rows = order.split_off(b.split_at);
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                let right = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                nodes[slot] = Node::Split { feature: b.feature, threshold: b.threshold, left, right };
                stack.push((right, right_rows, depth + 1));
                stack.push((left, order, depth + 1));
            }
        }
    }
    DecisionTree { nodes, n_features: p }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fm(rows: Vec<Vec<f64>>, y: Vec<f64>) -> FeatureMatrix {
        let p = rows[0].len();
        FeatureMatrix::new((0..p).map(|j| format!("f{j}")).collect(), rows, y).unwrap()
    }

    #[test]
    fn single_split_on_step() {
        let x = fm((0..6).map(|i| vec![f64::from(i)]).collect(), vec![1.0, 1.0, 1.0, 5.0, 5.0, 5.0]);
        let cols = Columns::new(&x, &x.target);
        let params = TreeParams { max_depth: None, min_leaf: 1, mtry: None };
        let t = grow_tree(&cols, &x.target, (0..6).collect(), &params, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(t.nodes.len(), 3);
        assert_eq!(t.nodes[0], Node::Split { feature: 0, threshold: 2.5, left: 1, right: 2 });
        assert_eq!(t.predict_row(&[0.3]), 1.0);
        assert_eq!(t.predict_row(&[9.0]), 5.0);
    }

    #[test]
    fn tie_prefers_lowest_feature_index() {
        // both features induce the same partition
        let x = fm((0..4).map(|i| vec![f64::from(i), f64::from(i) * 10.0]).collect(), vec![0.0, 0.0, 1.0, 1.0]);
        let cols = Columns::new(&x, &x.target);
        let params = TreeParams { max_depth: Some(1), min_leaf: 1, mtry: None };
        let t = grow_tree(&cols, &x.target, (0..4).collect(), &params, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn min_leaf_and_depth_respected() {
        let x = fm((0..20).map(|i| vec![f64::from(i)]).collect(), (0..20).map(f64::from).collect());
        let cols = Columns::new(&x, &x.target);
        let params = TreeParams { max_depth: Some(2), min_leaf: 3, mtry: None };
        let t = grow_tree(&cols, &x.target, (0..20).collect(), &params, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(t.depth() <= 2);
        assert!(t.leaf_count() <= 4);
    }
}
