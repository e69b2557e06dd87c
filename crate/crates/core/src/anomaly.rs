//! Windowed anomaly scoring, k-means clustering of anomaly windows and
//! nearest-centroid categorization.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{MonitoringRecord, TARGET};

/// Metric name carrying the per-UE offered load in a monitoring record.
pub const DEMAND: &str = "demand_bps";
pub const SUMMARY_DIM: usize = 6;
pub const SUMMARY_NAMES: [&str; SUMMARY_DIM] =
    ["mean_observed_cqi", "mean_predicted_cqi", "residual_rmse", "ue_count", "handover_count", "mean_demand_mbps"];

/// Area-level aggregate over a range of ticks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start_tick: u64,
    /// Exclusive.
    pub end_tick: u64,
    /// Ordered as [`SUMMARY_NAMES`].
    pub summary: Vec<f64>,
}

impl Window {
    pub fn residual_rmse(&self) -> f64 {
        self.summary[2]
    }

    pub fn ue_count(&self) -> f64 {
        self.summary[3]
    }
}

/// Summarizes records spanning one window. `predictions[i]` belongs to
/// `records[i]`; rows without a prediction do not enter the residual. UE count
/// is the mean number of distinct UEs per tick, and a handover is a change of
/// serving gNB between consecutive records of one UE.
pub fn summarize_window(records: &[MonitoringRecord], predictions: &[Option<f64>], tick_ms: u64) -> Result<Window> {
    if records.is_empty() {
        return Err(Error::Empty("anomaly window".into()));
    }
    if records.len() != predictions.len() {
        return Err(Error::Dimension { expected: records.len(), got: predictions.len() });
    }
    let tick_ms = tick_ms.max(1);
    let ticks: Vec<u64> = records.iter().map(|r| r.timestamp_ms / tick_ms).collect();
    let start_tick = *ticks.iter().min().expect("nonempty");
    let end_tick = ticks.iter().max().expect("nonempty") + 1;

    let mut obs_sum = 0.0;
    let mut obs_n = 0usize;
    let mut pred_sum = 0.0;
    let mut sq = 0.0;
    let mut pred_n = 0usize;
    let mut demand = 0.0;
    let mut per_tick: BTreeMap<u64, BTreeSet<&str>> = BTreeMap::new();
    let mut serving: HashMap<&str, &str> = HashMap::new();
    let mut handovers = 0usize;
    for ((r, p), &t) in records.iter().zip(predictions).zip(&ticks) {
        let ue = r.ue_id.as_deref().unwrap_or("");
        per_tick.entry(t).or_default().insert(ue);
        if let Some(g) = r.gnb_id.as_deref() {
            if let Some(prev) = serving.insert(ue, g) {
                if prev != g {
                    handovers += 1;
                }
            }
        }
        demand += r.metric(DEMAND).unwrap_or(0.0);
        if let Some(o) = r.metric(TARGET) {
            obs_sum += o;
            obs_n += 1;
            if let Some(p) = p {
                pred_sum += p;
                sq += (o - p) * (o - p);
                pred_n += 1;
            }
        }
    }
    let mean_obs = if obs_n > 0 { obs_sum / obs_n as f64 } else { 0.0 };
    let (mean_pred, resid) = if pred_n > 0 { (pred_sum / pred_n as f64, (sq / pred_n as f64).sqrt()) } else { (mean_obs, 0.0) };
    let ue_count = per_tick.values().map(BTreeSet::len).sum::<usize>() as f64 / per_tick.len() as f64;
    Ok(Window {
        start_tick,
        end_tick,
        summary: vec![mean_obs, mean_pred, resid, ue_count, handovers as f64, demand / records.len() as f64 / 1e6],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub min_history: usize,
    pub epsilon: f64,
    /// Returned instead of an infinite score when the history has no spread.
    pub max_score: f64,
    pub threshold: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { min_history: 10, epsilon: 1e-9, max_score: 1e6, threshold: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub value: f64,
    pub window: Window,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreOutcome {
    Score(AnomalyScore),
    /// Not enough history yet; the caller should wait for more windows.
    NotReady { have: usize, need: usize },
}

/// Z-score of the current residual RMSE against the history's residual RMSEs.
pub fn score_window(history: &[Window], current: &Window, cfg: &ScoreConfig) -> ScoreOutcome {
    if history.len() < cfg.min_history.max(1) {
        return ScoreOutcome::NotReady { have: history.len(), need: cfg.min_history.max(1) };
    }
    let n = history.len() as f64;
    let mean = history.iter().map(Window::residual_rmse).sum::<f64>() / n;
    let var = history.iter().map(|w| (w.residual_rmse() - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(cfg.epsilon);
    let z = (current.residual_rmse() - mean) / sd;
    ScoreOutcome::Score(AnomalyScore {
        value: z.clamp(-cfg.max_score, cfg.max_score),
        window: current.clone(),
        threshold: cfg.threshold,
    })
}

pub fn detect(score: &AnomalyScore) -> bool {
    score.value >= score.threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    MieSurge,
    RouteShift,
    DemandDrop,
    Unknown,
}

impl AnomalyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::MieSurge => "mie_surge",
            AnomalyKind::RouteShift => "route_shift",
            AnomalyKind::DemandDrop => "demand_drop",
            AnomalyKind::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyClass {
    pub name: AnomalyKind,
    pub recommended_model_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after every Lloyd iteration.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
    /// 99th percentile of training point to assigned-centroid distances.
    pub distance_q99: f64,
    /// One class per centroid once labeled.
    #[serde(default)]
    pub labels: Option<Vec<AnomalyKind>>,
    #[serde(default)]
    pub recommended_models: BTreeMap<AnomalyKind, String>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = dist2(c, p);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Nearest-rank percentile of a nonempty slice.
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    v[idx]
}

pub const KMEANS_MAX_ITER: usize = 100;

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or the iteration cap is hit.
pub fn kmeans_fit(points: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterModel> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let dim = points.first().map_or(0, Vec::len);
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::Dimension { expected: dim, got: bad.len() });
    }
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.contains(&p) {
            distinct.push(p);
        }
    }
    if distinct.len() < k {
        return Err(Error::InsufficientData(format!("{} distinct points for k = {k}", distinct.len())));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut pick = d2.iter().rposition(|&d| d > 0.0).expect("a point off the current centroids");
        let mut u = rng.random::<f64>() * total;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && u < d {
                pick = i;
                break;
            }
            u -= d;
        }
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, &centroids[centroids.len() - 1]));
        }
    }

    let mut assign: Vec<usize> = points.iter().map(|p| nearest(&centroids, p).0).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(&centroids, p).0).collect();
        let inertia: f64 = points.iter().zip(&next).map(|(p, &a)| dist2(p, &centroids[a])).sum();
        trace.push(inertia);
        let changed = next != assign;
        assign = next;
        if !changed || iterations >= KMEANS_MAX_ITER {
            break;
        }
    }
    let dists: Vec<f64> = points.iter().zip(&assign).map(|(p, &a)| dist2(p, &centroids[a]).sqrt()).collect();
    Ok(ClusterModel {
        k,
        inertia: *trace.last().expect("at least one iteration"),
        inertia_trace: trace,
        iterations,
        distance_q99: if dists.is_empty() { 0.0 } else { quantile(&dists, 0.99) },
        centroids,
        labels: None,
        recommended_models: BTreeMap::new(),
    })
}

impl ClusterModel {
    pub fn assign(&self, p: &[f64]) -> (usize, f64) {
        let (j, d2) = nearest(&self.centroids, p);
        (j, d2.sqrt())
    }

    /// Labels each centroid with the majority class of the labeled points
    /// assigned to it (ties to the smaller class); unvisited centroids become
    /// `unknown`.
    pub fn label(&mut self, points: &[Vec<f64>], classes: &[AnomalyKind]) -> Result<()> {
        if points.len() != classes.len() {
            return Err(Error::Dimension { expected: points.len(), got: classes.len() });
        }
        let mut votes: Vec<BTreeMap<AnomalyKind, usize>> = vec![BTreeMap::new(); self.k];
        for (p, c) in points.iter().zip(classes) {
            *votes[self.assign(p).0].entry(*c).or_default() += 1;
        }
        self.labels = Some(
            votes
                .into_iter()
                .map(|v| {
                    v.into_iter()
                        .fold(None, |best: Option<(AnomalyKind, usize)>, (c, n)| match best {
                            Some((_, bn)) if bn >= n => best,
                            _ => Some((c, n)),
                        })
                        .map_or(AnomalyKind::Unknown, |(c, _)| c)
                })
                .collect(),
        );
        Ok(())
    }

    pub fn set_recommended_model(&mut self, kind: AnomalyKind, model_id: impl Into<String>) {
        self.recommended_models.insert(kind, model_id.into());
    }

    /// Cluster index only, for unlabeled use.
    pub fn cluster_of(&self, window: &Window) -> usize {
        self.assign(&window.summary).0
    }
}

/// Class of the nearest centroid, or `unknown` when the window lies farther
/// from it than the 99th percentile of training distances.
pub fn categorize(cm: &ClusterModel, window: &Window) -> Result<AnomalyClass> {
    let labels = cm.labels.as_ref().ok_or(Error::Unlabeled)?;
    if window.summary.len() != cm.centroids[0].len() {
        return Err(Error::Dimension { expected: cm.centroids[0].len(), got: window.summary.len() });
    }
    let (j, d) = cm.assign(&window.summary);
    let name = if d > cm.distance_q99 { AnomalyKind::Unknown } else { labels[j] };
    Ok(AnomalyClass { name, recommended_model_id: cm.recommended_models.get(&name).cloned() })
}
