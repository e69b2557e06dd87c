use serde::{Deserialize, Serialize};

use super::{ForestModel, GbtModel, LinearModel};
use crate::error::{Error, Result};
use crate::eval::{accuracy, rmse};

/// Weighted average of the four base regressors, weights in whole percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedModel {
    pub lasso: LinearModel,
    pub elasticnet: LinearModel,
    pub forest: ForestModel,
    pub gbt: GbtModel,
    /// LASSO, Elastic Net, forest, GBT; sums to 100.
    pub weights: [u32; 4],
}

/// Weighted sum with weights given in percent. The evaluation order is fixed so
/// that a vertex weight reproduces its component bit for bit.
pub fn blend(weights: &[u32], preds: &[f64]) -> f64 {
    weights.iter().zip(preds).map(|(&w, &p)| (f64::from(w) / 100.0) * p).sum()
}

impl CombinedModel {
    pub fn new(
        lasso: LinearModel,
        elasticnet: LinearModel,
        forest: ForestModel,
        gbt: GbtModel,
        weights: [u32; 4],
    ) -> Result<Self> {
        if weights.iter().sum::<u32>() != 100 {
            return Err(Error::Config(format!("combined weights {weights:?} must sum to 100")));
        }
        Ok(Self { lasso, elasticnet, forest, gbt, weights })
    }

    pub fn component_predictions(&self, row: &[f64]) -> [f64; 4] {
        [
            self.lasso.predict_row(row),
            self.elasticnet.predict_row(row),
            self.forest.predict_row(row),
            self.gbt.predict_row(row),
        ]
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        blend(&self.weights, &self.component_predictions(row))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSearch {
    pub weights: Vec<u32>,
    pub rmse: f64,
    pub accuracy_percent: f64,
    pub evaluated: usize,
}

/// Calls `f` on every tuple of `parts` multiples of `step` summing to 100, in
/// lexicographic order.
pub fn for_each_composition(parts: usize, step: u32, mut f: impl FnMut(&[u32])) {
    fn rec(buf: &mut Vec<u32>, parts: usize, left: u32, step: u32, f: &mut dyn FnMut(&[u32])) {
        if buf.len() + 1 == parts {
            buf.push(left);
            f(buf);
            buf.pop();
            return;
        }
        let mut w = 0;
        while w <= left {
            buf.push(w);
            rec(buf, parts, left - w, step, f);
            buf.pop();
            w += step;
        }
    }
    if parts == 0 {
        return;
    }
    rec(&mut Vec::with_capacity(parts), parts, 100, step, &mut f);
}

/// Exhaustive search over integer-percent weights at the given step.
///
/// Minimizes validation RMSE; ties go to higher accuracy, then fewer nonzero
/// weights, then the lexicographically smallest tuple.
pub fn search_combined_weights(preds: &[Vec<f64>], y: &[f64], step: u32) -> Result<WeightSearch> {
    if y.is_empty() {
        return Err(Error::Empty("validation set".into()));
    }
    if preds.is_empty() {
        return Err(Error::Empty("model predictions".into()));
    }
    if step == 0 || 100 % step != 0 {
        return Err(Error::Config(format!("step {step} must divide 100")));
    }
    if let Some(bad) = preds.iter().find(|p| p.len() != y.len()) {
        return Err(Error::Dimension { expected: y.len(), got: bad.len() });
    }
    let n = y.len();
    let mut blended = vec![0.0; n];
    let mut row_preds = vec![0.0; preds.len()];
    let mut best: Option<WeightSearch> = None;
    let mut evaluated = 0;
    for_each_composition(preds.len(), step, |w| {
        evaluated += 1;
        for i in 0..n {
            for (k, p) in preds.iter().enumerate() {
                row_preds[k] = p[i];
            }
            blended[i] = blend(w, &row_preds);
        }
        let r = rmse(y, &blended).expect("nonempty");
        let better = match &best {
            None => true,
            Some(b) if r < b.rmse => true,
            Some(b) if r > b.rmse => false,
            Some(b) => {
                let acc = accuracy(y, &blended).expect("nonempty");
                let nz = |v: &[u32]| v.iter().filter(|&&x| x > 0).count();
                acc > b.accuracy_percent || (acc == b.accuracy_percent && nz(w) < nz(&b.weights))
            }
        };
        if better {
            let acc = accuracy(y, &blended).expect("nonempty");
            best = Some(WeightSearch { weights: w.to_vec(), rmse: r, accuracy_percent: acc, evaluated: 0 });
        }
    });
    let mut best = best.expect("at least one composition");
    best.evaluated = evaluated;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composition_counts() {
        let mut n = 0;
        for_each_composition(4, 10, |w| {
            assert_eq!(w.iter().sum::<u32>(), 100);
            n += 1;
        });
        assert_eq!(n, 286);
        let mut n1 = 0;
        for_each_composition(4, 1, |_| n1 += 1);
        assert_eq!(n1, 176_851);
    }

    #[test]
    fn dominating_model_gets_everything() {
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let preds = vec![vec![5.0; 4], vec![1.0, 2.0, 3.0, 4.0], vec![0.0; 4], vec![9.0; 4]];
        let s = search_combined_weights(&preds, &y, 1).unwrap();
        assert_eq!(s.weights, vec![0, 100, 0, 0]);
        assert_eq!(s.rmse, 0.0);
    }

    #[test]
    fn constructed_half_half_optimum() {
        let a = vec![2.0, 4.0, 6.0, 8.0];
        let b = vec![4.0, 6.0, 10.0, 12.0];
        let y: Vec<f64> = a.iter().zip(&b).map(|(x, z)| 0.5 * x + 0.5 * z).collect();
        let s = search_combined_weights(&[a, b, vec![0.0; 4], vec![20.0; 4]], &y, 1).unwrap();
        assert_eq!(s.weights, vec![50, 50, 0, 0]);
        assert!(s.rmse < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(search_combined_weights(&[vec![]], &[], 1), Err(Error::Empty(_))));
        assert!(matches!(search_combined_weights(&[vec![1.0]], &[1.0], 7), Err(Error::Config(_))));
    }

    #[test]
    fn weights_must_sum_to_100() {
        assert_eq!(blend(&[0, 0, 0, 100], &[1.0, 2.0, 3.0, 0.123456789]), 0.123456789);
    }
}
