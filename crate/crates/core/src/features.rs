//! Correlation-driven feature selection, polynomial expansion, and the
//! deployment-availability gate.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::MonitoringRecord;
use crate::preprocess::NormalizationParams;
use crate::table::{is_missing, DataTable};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    #[default]
    Pearson,
    Spearman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    /// Row-major, `names.len()` squared.
    pub values: Vec<f64>,
    /// Zero-variance columns; their off-diagonal coefficients are 0.
    pub degenerate: Vec<String>,
}

impl CorrelationMatrix {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let (i, j) = (self.index(a)?, self.index(b)?);
        Some(self.values[i * self.names.len() + j])
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Pairwise correlation of every numeric column.
pub fn correlation_matrix(table: &DataTable, method: CorrelationMethod) -> Result<CorrelationMatrix> {
    if table.row_count() < 2 {
        return Err(Error::InsufficientData("correlation needs at least 2 rows".into()));
    }
    let names = table.numeric_names();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(names.len());
    for n in &names {
        let v = table.num(n)?;
        if v.iter().any(|x| is_missing(*x)) {
            return Err(Error::InsufficientData(format!("column `{n}` has missing values")));
        }
        cols.push(match method {
            CorrelationMethod::Pearson => v.to_vec(),
            CorrelationMethod::Spearman => ranks(v),
        });
    }
    let n = table.row_count() as f64;
    // center and scale to unit norm once; the coefficient is then a dot product
    let mut degenerate = Vec::new();
    let unit: Vec<Option<Vec<f64>>> = cols
        .iter()
        .zip(&names)
        .map(|(c, name)| {
            let mean = c.iter().sum::<f64>() / n;
            let centered: Vec<f64> = c.iter().map(|x| x - mean).collect();
            let norm = centered.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                degenerate.push(name.clone());
                None
            } else {
                Some(centered.into_iter().map(|x| x / norm).collect())
            }
        })
        .collect();

    let p = names.len();
    let mut values = vec![0.0; p * p];
    for i in 0..p {
        values[i * p + i] = 1.0;
        for j in i + 1..p {
            let r = match (&unit[i], &unit[j]) {
                (Some(a), Some(b)) => a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0),
                _ => 0.0,
            };
            values[i * p + j] = r;
            values[j * p + i] = r;
        }
    }
    Ok(CorrelationMatrix { names, values, degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Square,
    Cube,
    Sqrt,
    Cbrt,
}

impl Transform {
    pub const ALL: [Transform; 5] =
        [Transform::Identity, Transform::Square, Transform::Cube, Transform::Sqrt, Transform::Cbrt];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Square => x * x,
            Transform::Cube => x * x * x,
            Transform::Sqrt => x.sqrt(),
            Transform::Cbrt => x.cbrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExpandedFeature {
    pub base: String,
    pub transform: Transform,
}

impl ExpandedFeature {
    pub fn new(base: impl Into<String>, transform: Transform) -> Self {
        Self { base: base.into(), transform }
    }
}

impl fmt::Display for ExpandedFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = &self.base;
        match self.transform {
            Transform::Identity => write!(f, "{b}"),
            Transform::Square => write!(f, "{b}^2"),
            Transform::Cube => write!(f, "{b}^3"),
            Transform::Sqrt => write!(f, "sqrt({b})"),
            Transform::Cbrt => write!(f, "cbrt({b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub id: String,
    pub target: String,
    pub base_features: Vec<String>,
    pub excluded: Vec<Exclusion>,
    pub expanded_features: Vec<ExpandedFeature>,
    /// Ranges of the base features, fitted on training data.
    pub normalization: NormalizationParams,
}

impl FeatureSet {
    /// Feature set over hand-picked bases, each expanded with every transform.
    pub fn from_bases(id: impl Into<String>, target: &str, bases: &[&str]) -> Self {
        let base_features: Vec<String> = bases.iter().map(|b| b.to_string()).collect();
        let expanded_features = base_features
            .iter()
            .flat_map(|b| Transform::ALL.iter().map(move |&t| ExpandedFeature::new(b.clone(), t)))
            .collect();
        Self {
            id: id.into(),
            target: target.to_string(),
            base_features,
            excluded: Vec::new(),
            expanded_features,
            normalization: NormalizationParams::default(),
        }
    }

    pub fn expanded_names(&self) -> Vec<String> {
        self.expanded_features.iter().map(ToString::to_string).collect()
    }

    pub fn width(&self) -> usize {
        self.expanded_features.len()
    }

    /// Builds the model input for one runtime record, scaling with the stored
    /// ranges. Fails with the list of unavailable bases when any is absent.
    pub fn vector_from_record(&self, record: &MonitoringRecord) -> Result<Vec<f64>, Vec<String>> {
        let missing: Vec<String> =
            self.base_features.iter().filter(|b| record.metric(b).is_none()).cloned().collect();
        if !missing.is_empty() {
            return Err(missing);
        }
        Ok(self
            .expanded_features
            .iter()
            .map(|ef| {
                let raw = record.metric(&ef.base).unwrap_or(0.0);
                let x = self.normalization.get(&ef.base).map_or(raw.clamp(0.0, 1.0), |r| r.apply(raw));
                ef.transform.apply(x)
            })
            .collect())
    }

    pub fn availability(&self, available: &BTreeSet<String>) -> Availability {
        feature_availability_check(&self.expanded_features, available)
    }
}

/// Default exclusion: scheduler statistics computed from the CQI report.
pub fn default_exclusions() -> Vec<Exclusion> {
    vec![Exclusion { name: "mcs1_dl".into(), reason: "directly calculated from the target".into() }]
}

/// Ranks candidates by |correlation with target| (descending, ties by name)
/// after removing the target and the exclusions, and keeps the top `k`.
/// Every selected base expands to all five transforms.
pub fn select_features(
    corr: &CorrelationMatrix,
    target: &str,
    k: usize,
    exclusions: &[Exclusion],
) -> Result<FeatureSet> {
    let t = corr.index(target).ok_or_else(|| Error::UnknownColumn(target.to_string()))?;
    let p = corr.names.len();
    let excluded: BTreeSet<&str> = exclusions.iter().map(|e| e.name.as_str()).collect();
    let mut ranked: Vec<(&str, f64)> = corr
        .names
        .iter()
        .enumerate()
        .filter(|(i, n)| *i != t && !excluded.contains(n.as_str()))
        .map(|(i, n)| (n.as_str(), corr.values[t * p + i].abs()))
        .collect();
    if k > ranked.len() {
        return Err(Error::TooManyFeatures { k, available: ranked.len() });
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let base_features: Vec<String> = ranked[..k].iter().map(|(n, _)| n.to_string()).collect();
    let expanded_features = base_features
        .iter()
        .flat_map(|b| Transform::ALL.iter().map(move |&t| ExpandedFeature::new(b.clone(), t)))
        .collect();
    Ok(FeatureSet {
        id: format!("fs-{target}-k{k}"),
        target: target.to_string(),
        base_features,
        excluded: exclusions.iter().filter(|e| corr.index(&e.name).is_some()).cloned().collect(),
        expanded_features,
        normalization: NormalizationParams::default(),
    })
}

/// Dense design matrix with the regression target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    /// Row-major, `rows * names.len()`.
    pub data: Vec<f64>,
    pub rows: usize,
    pub target: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>, target: Vec<f64>) -> Result<Self> {
        let p = names.len();
        if rows.len() != target.len() {
            return Err(Error::Dimension { expected: rows.len(), got: target.len() });
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::Dimension { expected: p, got: bad.len() });
        }
        Ok(Self { names, rows: rows.len(), data: rows.concat(), target })
    }

    pub fn cols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.cols();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            names: self.names.clone(),
            data: idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            rows: idx.len(),
            target: idx.iter().map(|&i| self.target[i]).collect(),
        }
    }

    pub fn to_table(&self, target_name: &str) -> Result<DataTable> {
        let mut t = DataTable::new();
        for (j, n) in self.names.iter().enumerate() {
            t.push_numeric(n.clone(), self.column(j))?;
        }
        t.push_numeric(target_name, self.target.clone())?;
        Ok(t)
    }
}

const DOMAIN_TOL: f64 = 1e-9;

/// Emits x, x², x³, √x and ∛x per base feature, in base order. Base columns
/// must already be scaled to [0, 1].
pub fn expand_polynomial(table: &DataTable, fs: &FeatureSet) -> Result<FeatureMatrix> {
    let n = table.row_count();
    let target = table.num(&fs.target)?.to_vec();
    let mut cols: Vec<&[f64]> = Vec::with_capacity(fs.base_features.len());
    for b in &fs.base_features {
        let v = table.num(b)?;
        if let Some(&bad) = v.iter().find(|x| is_missing(**x) || **x < -DOMAIN_TOL || **x > 1.0 + DOMAIN_TOL) {
            return Err(Error::Domain { feature: b.clone(), value: bad });
        }
        cols.push(v);
    }
    let index_of = |base: &str| fs.base_features.iter().position(|b| b == base).expect("base listed");
    let plan: Vec<(usize, Transform)> =
        fs.expanded_features.iter().map(|ef| (index_of(&ef.base), ef.transform)).collect();
    let mut data = Vec::with_capacity(n * plan.len());
    for i in 0..n {
        for &(c, t) in &plan {
            data.push(t.apply(cols[c][i].clamp(0.0, 1.0)));
        }
    }
    Ok(FeatureMatrix { names: fs.expanded_names(), data, rows: n, target })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "violations", rename_all = "snake_case")]
pub enum Availability {
    Pass,
    Violations(Vec<String>),
}

impl Availability {
    pub fn passed(&self) -> bool {
        matches!(self, Availability::Pass)
    }
}

/// One violation per input feature whose base metric is not available at runtime.
pub fn feature_availability_check(features: &[ExpandedFeature], available: &BTreeSet<String>) -> Availability {
    let v: Vec<String> =
        features.iter().filter(|f| !available.contains(&f.base)).map(ToString::to_string).collect();
    if v.is_empty() {
        Availability::Pass
    } else {
        Availability::Violations(v)
    }
}

/// Which metrics a deployed model can actually read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentProfile {
    pub name: String,
    pub unavailable: BTreeSet<String>,
}

impl DeploymentProfile {
    pub fn full() -> Self {
        Self { name: "full".into(), unavailable: BTreeSet::new() }
    }

    /// A device that sleeps between transmissions reports no RRC measurements.
    pub fn sleeping_iot() -> Self {
        Self {
            name: "sleeping_iot".into(),
            unavailable: ["rsrp", "rsrq", "phr"].iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::full()),
            "sleeping_iot" | "sleeping-iot" => Some(Self::sleeping_iot()),
            _ => None,
        }
    }

    pub fn available_from<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> BTreeSet<String> {
        names.into_iter().filter(|n| !self.unavailable.contains(*n)).map(str::to_string).collect()
    }

    pub fn check(&self, fs: &FeatureSet) -> Availability {
        fs.availability(&self.available_from(fs.base_features.iter().map(String::as_str)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(cols: &[(&str, Vec<f64>)]) -> DataTable {
        let mut t = DataTable::new();
        for (n, v) in cols {
            t.push_numeric(*n, v.clone()).unwrap();
        }
        t
    }

    #[test]
    fn diagonal_and_perfect_linear() {
        let x = vec![1.0, 2.0, 4.0, 7.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        let c = correlation_matrix(&table(&[("x", x), ("y", y)]), CorrelationMethod::Pearson).unwrap();
        assert_eq!(c.get("x", "x"), Some(1.0));
        assert!((c.get("x", "y").unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_flagged() {
        let c = correlation_matrix(&table(&[("x", vec![1.0, 2.0]), ("k", vec![3.0, 3.0])]), CorrelationMethod::Pearson)
            .unwrap();
        assert_eq!(c.get("x", "k"), Some(0.0));
        assert_eq!(c.degenerate, vec!["k".to_string()]);
    }

    #[test]
    fn too_few_rows() {
        let r = correlation_matrix(&table(&[("x", vec![1.0])]), CorrelationMethod::Pearson);
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn spearman_handles_monotone_nonlinear() {
        let x: Vec<f64> = (1..20).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
        let c = correlation_matrix(&table(&[("x", x), ("y", y)]), CorrelationMethod::Spearman).unwrap();
        assert!((c.get("x", "y").unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn excluded_feature_never_selected() {
        let y: Vec<f64> = (0..30).map(|i| f64::from(i % 15 + 1)).collect();
        let mcs: Vec<f64> = y.iter().map(|v| 1.85 * v).collect();
        let a: Vec<f64> = y.iter().enumerate().map(|(i, v)| v + (i % 3) as f64).collect();
        let b: Vec<f64> = (0..30).map(|i| f64::from((i * 7) % 11)).collect();
        let c = correlation_matrix(&table(&[("wb_cqi", y), ("mcs1_dl", mcs), ("a", a), ("b", b)]), CorrelationMethod::Pearson)
            .unwrap();
        let fs = select_features(&c, "wb_cqi", 2, &default_exclusions()).unwrap();
        assert_eq!(fs.base_features, vec!["a".to_string(), "b".to_string()]);
        assert_eq!(fs.expanded_features.len(), 10);
        assert!(select_features(&c, "wb_cqi", 0, &[]).unwrap().base_features.is_empty());
        assert!(matches!(
            select_features(&c, "wb_cqi", 3, &default_exclusions()),
            Err(Error::TooManyFeatures { k: 3, available: 2 })
        ));
    }

    #[test]
    fn expansion_fixed_points_and_quarter() {
        let t = table(&[("x", vec![0.0, 1.0, 0.25]), ("y", vec![1.0, 2.0, 3.0])]);
        let fs = FeatureSet {
            id: "t".into(),
            target: "y".into(),
            base_features: vec!["x".into()],
            excluded: vec![],
            expanded_features: Transform::ALL.iter().map(|&t| ExpandedFeature::new("x", t)).collect(),
            normalization: NormalizationParams::default(),
        };
        let m = expand_polynomial(&t, &fs).unwrap();
        assert_eq!(m.row(0), &[0.0; 5]);
        assert_eq!(m.row(1), &[1.0; 5]);
        let r = m.row(2);
        assert_eq!(&r[..4], &[0.25, 0.0625, 0.015625, 0.5]);
        assert!((r[4] - 0.25f64.powf(1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(m.names, vec!["x", "x^2", "x^3", "sqrt(x)", "cbrt(x)"]);
    }

    #[test]
    fn expansion_rejects_out_of_domain() {
        let t = table(&[("x", vec![1.5]), ("y", vec![1.0])]);
        let fs = FeatureSet {
            id: "t".into(),
            target: "y".into(),
            base_features: vec!["x".into()],
            excluded: vec![],
            expanded_features: vec![ExpandedFeature::new("x", Transform::Identity)],
            normalization: NormalizationParams::default(),
        };
        assert!(matches!(expand_polynomial(&t, &fs), Err(Error::Domain { .. })));
    }

    #[test]
    fn sleeping_iot_gate_names_six_violations() {
        let lasso_top = vec![
            ExpandedFeature::new("rsrp", Transform::Sqrt),
            ExpandedFeature::new("rsrq", Transform::Identity),
            ExpandedFeature::new("phr", Transform::Sqrt),
            ExpandedFeature::new("rsrp", Transform::Cbrt),
            ExpandedFeature::new("rsrp", Transform::Identity),
            ExpandedFeature::new("phr", Transform::Identity),
        ];
        let profile = DeploymentProfile::sleeping_iot();
        let available = profile.available_from(["rsrp", "rsrq", "phr", "harq_retx"]);
        match feature_availability_check(&lasso_top, &available) {
            Availability::Violations(v) => {
                assert_eq!(v, vec!["sqrt(rsrp)", "rsrq", "sqrt(phr)", "cbrt(rsrp)", "rsrp", "phr"])
            }
            Availability::Pass => panic!("expected violations"),
        }
        assert!(feature_availability_check(&[], &available).passed());
        let all: BTreeSet<String> = ["rsrp", "rsrq", "phr"].iter().map(|s| s.to_string()).collect();
        assert!(feature_availability_check(&lasso_top, &all).passed());
    }
}
