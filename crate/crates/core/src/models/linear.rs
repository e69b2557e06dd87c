//! LASSO and Elastic Net by cyclic coordinate descent.
//!
//! Works in standardized space: columns are centered (and scaled to unit
//! population variance when `standardize` is set), the target is centered.
//! The minimized objective is
//!
//! ```text
//! (1/2n)·‖y − Zβ‖² + λ₁‖β‖₁ + (λ₂/2)‖β‖²
//! ```
//!
//! Coordinate updates use the Gram matrix `ZᵀZ/n`, so a sweep costs O(p²)
//! regardless of the row count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// Coefficients in standardized space.
    pub coefficients: Vec<f64>,
    /// Standardized-space intercept: the training-target mean.
    pub intercept: f64,
    pub l1_penalty: f64,
    pub l2_penalty: f64,
    pub standardization: Vec<Standardization>,
    pub sweeps: usize,
}

impl LinearModel {
    pub fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(&self.standardization)
                .zip(row)
                .map(|((b, s), x)| b * (x - s.mean) / s.std)
                .sum::<f64>()
    }

    /// Prediction for an already standardized row.
    pub fn predict_standardized(&self, z: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(z).map(|(b, v)| b * v).sum::<f64>()
    }

    /// Coefficients and intercept on the original feature scale.
    pub fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        let coef: Vec<f64> = self.coefficients.iter().zip(&self.standardization).map(|(b, s)| b / s.std).collect();
        let shift: f64 = coef.iter().zip(&self.standardization).map(|(c, s)| c * s.mean).sum();
        (coef, self.intercept - shift)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    pub l1_penalty: f64,
    pub l2_penalty: f64,
    /// Penalty grid searched when a validation split is supplied.
    pub grid: Vec<f64>,
    /// Share of a grid value assigned to the L1 term (Elastic Net only).
    pub l1_ratio: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub standardize: bool,
}

/// `points` log-spaced values from `hi` down to `lo`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![hi];
    }
    let (a, b) = (hi.ln(), lo.ln());
    (0..points).map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp()).collect()
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            l1_penalty: 1e-3,
            l2_penalty: 1e-3,
            grid: log_grid(1e-4, 1.0, 20),
            l1_ratio: 0.5,
            tolerance: 1e-6,
            max_iterations: 100_000,
            standardize: true,
        }
    }
}

/// Precomputed standardized statistics of a design.
#[derive(Debug, Clone)]
pub struct Design {
    pub n: usize,
    pub p: usize,
    pub standardization: Vec<Standardization>,
    pub y_mean: f64,
    /// `ZᵀZ/n`, row-major.
    pub gram: Vec<f64>,
    /// `Zᵀyc/n`.
    pub zty: Vec<f64>,
    /// `yc·yc/n`.
    pub yty: f64,
    /// Columns with no variance; their coefficients stay 0.
    pub dead: Vec<bool>,
}

impl Design {
    pub fn new(x: &FeatureMatrix, standardize: bool) -> Result<Self> {
        let (n, p) = (x.rows, x.cols());
        if n < 2 {
            return Err(Error::InsufficientData("linear models need at least 2 rows".into()));
        }
        let nf = n as f64;
        let mut standardization = Vec::with_capacity(p);
        let mut dead = Vec::with_capacity(p);
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(p);
        for j in 0..p {
            let col = x.column(j);
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::InsufficientData(format!("column {j} has missing or non-finite values")));
            }
            let mean = col.iter().sum::<f64>() / nf;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
            let std = var.sqrt();
            let is_dead = !(std > 0.0);
            let scale = if standardize && !is_dead { std } else { 1.0 };
            standardization.push(Standardization { mean, std: scale });
            dead.push(is_dead);
            z.push(col.iter().map(|v| (v - mean) / scale).collect());
        }
        let y_mean = x.target.iter().sum::<f64>() / nf;
        let yc: Vec<f64> = x.target.iter().map(|v| v - y_mean).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
        let mut gram = vec![0.0; p * p];
        for i in 0..p {
            for j in i..p {
                let g = dot(&z[i], &z[j]) / nf;
                gram[i * p + j] = g;
                gram[j * p + i] = g;
            }
        }
        let zty = z.iter().map(|c| dot(c, &yc) / nf).collect();
        let yty = dot(&yc, &yc) / nf;
        Ok(Self { n, p, standardization, y_mean, gram, zty, yty, dead })
    }

    /// `(1/n)·zⱼᵀr` for every j, where `r = yc − Zβ`.
    pub fn correlations(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.p)
            .map(|j| self.zty[j] - (0..self.p).map(|k| self.gram[j * self.p + k] * beta[k]).sum::<f64>())
            .collect()
    }

    pub fn objective(&self, beta: &[f64], l1: f64, l2: f64) -> f64 {
        let p = self.p;
        let mut quad = 0.0;
        for i in 0..p {
            for k in 0..p {
                quad += beta[i] * self.gram[i * p + k] * beta[k];
            }
        }
        let lin: f64 = beta.iter().zip(&self.zty).map(|(b, c)| b * c).sum();
        let l1n: f64 = beta.iter().map(|b| b.abs()).sum();
        let l2n: f64 = beta.iter().map(|b| b * b).sum();
        0.5 * (self.yty - 2.0 * lin + quad) + l1 * l1n + 0.5 * l2 * l2n
    }

    /// Largest violation of the optimality conditions over all coordinates.
    pub fn kkt_residual(&self, beta: &[f64], l1: f64, l2: f64) -> f64 {
        let c = self.correlations(beta);
        (0..self.p)
            .filter(|&j| !self.dead[j])
            .map(|j| {
                let g = c[j] - l2 * beta[j];
                if beta[j] == 0.0 {
                    (g.abs() - l1).max(0.0)
                } else {
                    (g - l1 * beta[j].signum()).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    /// Smallest λ₁ that zeroes every coefficient.
    pub fn lambda_max(&self) -> f64 {
        self.zty.iter().zip(&self.dead).filter(|(_, d)| !**d).map(|(c, _)| c.abs()).fold(0.0, f64::max)
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Result of one penalized fit, with per-sweep objective values.
#[derive(Debug, Clone)]
pub struct CdFit {
    pub model: LinearModel,
    pub objective_trace: Vec<f64>,
    pub kkt_residual: f64,
}

/// Cyclic coordinate descent until both the largest coefficient change and the
/// KKT residual fall below `tol`.
pub fn coordinate_descent(
    design: &Design,
    l1: f64,
    l2: f64,
    tol: f64,
    max_iterations: usize,
    warm_start: Option<&[f64]>,
) -> Result<CdFit> {
    if !(tol > 0.0) || l1 < 0.0 || l2 < 0.0 {
        return Err(Error::Config("tolerance must be > 0 and penalties >= 0".into()));
    }
    let p = design.p;
    let mut beta = warm_start.map_or_else(|| vec![0.0; p], <[f64]>::to_vec);
    // c[j] tracks zty[j] − Σ_k G[j,k]·β[k]
    let mut c = design.correlations(&beta);
    let mut trace = vec![design.objective(&beta, l1, l2)];
    let build = |beta: &[f64], sweeps| LinearModel {
        coefficients: beta.to_vec(),
        intercept: design.y_mean,
        l1_penalty: l1,
        l2_penalty: l2,
        standardization: design.standardization.clone(),
        sweeps,
    };

    for sweep in 1..=max_iterations {
        let mut max_delta: f64 = 0.0;
        for j in 0..p {
            if design.dead[j] {
                continue;
            }
            let gjj = design.gram[j * p + j];
            let old = beta[j];
            let new = soft_threshold(c[j] + gjj * old, l1) / (gjj + l2);
            let delta = new - old;
            if delta != 0.0 {
                beta[j] = new;
                for (k, ck) in c.iter_mut().enumerate() {
                    *ck -= design.gram[k * p + j] * delta;
                }
                max_delta = max_delta.max(delta.abs());
            }
        }
        trace.push(design.objective(&beta, l1, l2));
        if max_delta < tol {
            let kkt = design.kkt_residual(&beta, l1, l2);
            if kkt < tol {
                return Ok(CdFit { model: build(&beta, sweep), objective_trace: trace, kkt_residual: kkt });
            }
            // refresh accumulated drift before continuing
            c = design.correlations(&beta);
        }
    }
    Err(Error::NotConverged { iterations: max_iterations, last: Box::new(build(&beta, max_iterations)) })
}

fn rmse_on(model: &LinearModel, v: &FeatureMatrix) -> f64 {
    let se: f64 = (0..v.rows).map(|i| (model.predict_row(v.row(i)) - v.target[i]).powi(2)).sum();
    (se / v.rows.max(1) as f64).sqrt()
}

fn fit_path(
    x: &FeatureMatrix,
    cfg: &LinearConfig,
    validation: Option<&FeatureMatrix>,
    penalties: impl Fn(f64) -> (f64, f64),
    default: (f64, f64),
) -> Result<LinearModel> {
    let design = Design::new(x, cfg.standardize)?;
    let Some(val) = validation.filter(|v| v.rows > 0 && !cfg.grid.is_empty()) else {
        return Ok(coordinate_descent(&design, default.0, default.1, cfg.tolerance, cfg.max_iterations, None)?.model);
    };
    if val.cols() != x.cols() {
        return Err(Error::Dimension { expected: x.cols(), got: val.cols() });
    }
    let mut grid = cfg.grid.clone();
    grid.sort_by(|a, b| b.total_cmp(a));
    let mut warm: Option<Vec<f64>> = None;
    let mut best: Option<(f64, LinearModel)> = None;
    let mut last_err = None;
    for lam in grid {
        let (l1, l2) = penalties(lam);
        // Grid points that run out of sweeps (small penalties on a nearly
        // collinear design) are skipped; the path keeps warm-starting.
        let model = match coordinate_descent(&design, l1, l2, cfg.tolerance, cfg.max_iterations, warm.as_deref()) {
            Ok(fit) => fit.model,
            Err(Error::NotConverged { iterations, last }) => {
                warm = Some(last.coefficients.clone());
                last_err = Some(Error::NotConverged { iterations, last });
                continue;
            }
            Err(e) => return Err(e),
        };
        let score = rmse_on(&model, val);
        warm = Some(model.coefficients.clone());
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, model));
        }
    }
    match best {
        Some((_, m)) => Ok(m),
        None => Err(last_err.expect("nonempty grid")),
    }
}

/// LASSO fit. With a validation matrix, λ₁ is picked from `cfg.grid` by
/// validation RMSE (larger λ wins ties); otherwise `cfg.l1_penalty` is used.
pub fn train_lasso(x: &FeatureMatrix, cfg: &LinearConfig, validation: Option<&FeatureMatrix>) -> Result<LinearModel> {
    fit_path(x, cfg, validation, |lam| (lam, 0.0), (cfg.l1_penalty, 0.0))
}

/// Elastic Net fit. Grid values λ split into λ₁ = ρλ and λ₂ = (1 − ρ)λ with
/// ρ = `l1_ratio`; without validation the configured pair is used.
pub fn train_elasticnet(x: &FeatureMatrix, cfg: &LinearConfig, validation: Option<&FeatureMatrix>) -> Result<LinearModel> {
    let rho = cfg.l1_ratio.clamp(0.0, 1.0);
    fit_path(x, cfg, validation, |lam| (rho * lam, (1.0 - rho) * lam), (cfg.l1_penalty, cfg.l2_penalty))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> FeatureMatrix {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![f64::from(i), f64::from((i * 5) % 7)]).collect();
        let y = rows.iter().map(|r| 2.0 * r[0] - r[1] + 1.0).collect();
        FeatureMatrix::new(vec!["a".into(), "b".into()], rows, y).unwrap()
    }

    #[test]
    fn full_shrinkage_threshold() {
        let x = toy();
        let d = Design::new(&x, true).unwrap();
        let fit = coordinate_descent(&d, d.lambda_max(), 0.0, 1e-10, 1000, None).unwrap();
        assert!(fit.model.coefficients.iter().all(|&b| b == 0.0));
        let mean = x.target.iter().sum::<f64>() / 12.0;
        assert_eq!(fit.model.intercept, mean);
        assert_eq!(fit.model.predict_standardized(&[0.0, 0.0]), mean);
    }

    #[test]
    fn unpenalized_fit_recovers_exact_relation() {
        let x = toy();
        let d = Design::new(&x, true).unwrap();
        let fit = coordinate_descent(&d, 0.0, 0.0, 1e-12, 100_000, None).unwrap();
        let (coef, b0) = fit.model.raw_coefficients();
        assert!((coef[0] - 2.0).abs() < 1e-8 && (coef[1] + 1.0).abs() < 1e-8 && (b0 - 1.0).abs() < 1e-7);
    }

    #[test]
    fn huge_penalties_zero_everything() {
        let cfg = LinearConfig { l1_penalty: 1e6, l2_penalty: 1e6, ..Default::default() };
        let m = train_elasticnet(&toy(), &cfg, None).unwrap();
        assert!(m.coefficients.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn non_convergence_carries_last_iterate() {
        let d = Design::new(&toy(), true).unwrap();
        match coordinate_descent(&d, 0.0, 0.0, 1e-300, 3, None) {
            Err(Error::NotConverged { iterations: 3, last }) => assert_eq!(last.sweeps, 3),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn grid_is_log_spaced_descending() {
        let g = log_grid(1e-4, 1.0, 20);
        assert_eq!(g.len(), 20);
        assert!((g[0] - 1.0).abs() < 1e-12 && (g[19] - 1e-4).abs() < 1e-16);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn validation_selects_from_grid() {
        let x = toy();
        let cfg = LinearConfig::default();
        let m = train_lasso(&x, &cfg, Some(&x)).unwrap();
        assert!(cfg.grid.contains(&m.l1_penalty));
        // smallest penalty fits this noiseless relation best
        assert_eq!(m.l1_penalty, *cfg.grid.last().unwrap());
    }
}
