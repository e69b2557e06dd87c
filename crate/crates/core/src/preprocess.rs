//! Cleaning passes over raw traces: relative timestamps, static-field pruning,
//! rule-based repair of corrupt readings and CQI spikes, min-max scaling.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{TIMESTAMP, UE_ID};
use crate::table::{is_missing, ColumnData, DataTable};

pub const DT_MS: &str = "dt_ms";

/// Adds `dt_ms`: time since the same UE's previous sample (0 for its first).
pub fn add_relative_timestamps(table: &DataTable) -> Result<DataTable> {
    let ts = table.num(TIMESTAMP)?;
    let ues = table.text(UE_ID).ok();
    let mut last: HashMap<&str, f64> = HashMap::new();
    let mut dt = Vec::with_capacity(ts.len());
    for (row, &t) in ts.iter().enumerate() {
        let ue = ues.map_or("", |u| u[row].as_str());
        match last.insert(ue, t) {
            Some(prev) if t < prev => return Err(Error::Ordering { ue: ue.to_string(), row }),
            Some(prev) => dt.push(t - prev),
            None => dt.push(0.0),
        }
    }
    let mut out = table.clone();
    out.remove_column(DT_MS);
    out.push_numeric(DT_MS, dt)?;
    Ok(out)
}

fn is_static(values: &[f64]) -> bool {
    let mut it = values.iter().filter(|v| !is_missing(**v));
    match it.next() {
        Some(first) => it.all(|v| v == first),
        None => true,
    }
}

/// Removes numeric columns whose non-missing values are all identical.
pub fn prune_static_fields(table: &DataTable) -> (DataTable, Vec<String>) {
    prune_static_fields_except(table, &[])
}

/// As [`prune_static_fields`], never removing the columns named in `keep`.
pub fn prune_static_fields_except(table: &DataTable, keep: &[&str]) -> (DataTable, Vec<String>) {
    let removed: Vec<String> = table
        .columns()
        .iter()
        .filter(|c| !keep.contains(&c.name.as_str()))
        .filter(|c| matches!(&c.data, ColumnData::Numeric(v) if is_static(v)))
        .map(|c| c.name.clone())
        .collect();
    let mut out = table.clone();
    for name in &removed {
        out.remove_column(name);
    }
    (out, removed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairMethod {
    NeighborMedian,
    WindowMean,
    TargetSpikeMedian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairedCell {
    pub row: usize,
    pub column: String,
    /// `None` when the input cell was missing.
    pub old: Option<f64>,
    pub new: f64,
    pub method: RepairMethod,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    pub detector: String,
    pub repaired_cells: Vec<RepairedCell>,
}

impl RepairReport {
    pub fn is_empty(&self) -> bool {
        self.repaired_cells.is_empty()
    }

    pub fn merge(mut self, other: RepairReport) -> RepairReport {
        if self.detector.is_empty() {
            self.detector = other.detector;
        } else if !other.detector.is_empty() {
            self.detector = format!("{}; {}", self.detector, other.detector);
        }
        self.repaired_cells.extend(other.repaired_cells);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub valid_min: f64,
    pub valid_max: f64,
    /// Neighbors feeding the median of an isolated flag.
    pub neighbor_window: usize,
    /// Runs longer than this use the trailing time-window mean instead.
    pub run_threshold: usize,
    pub mean_window_ms: f64,
}

impl DetectorConfig {
    pub fn range(valid_min: f64, valid_max: f64) -> Self {
        Self { valid_min, valid_max, neighbor_window: 4, run_threshold: 5, mean_window_ms: 100.0 }
    }

    fn flags(&self, v: f64) -> bool {
        is_missing(v) || v < self.valid_min || v > self.valid_max
    }
}

pub(crate) fn median(values: &mut [f64]) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    values.sort_unstable_by(f64::total_cmp);
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

/// The `w` nearest unflagged values to `i` inside `range`, nearest first,
/// preceding side first on equal distance.
fn nearest_unflagged(values: &[f64], flagged: &[bool], range: std::ops::Range<usize>, i: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(w);
    let mut d = 1;
    while out.len() < w {
        let before = i.checked_sub(d).filter(|&j| j >= range.start);
        let after = Some(i + d).filter(|&j| j < range.end);
        if before.is_none() && after.is_none() {
            break;
        }
        for j in [before, after].into_iter().flatten() {
            if out.len() < w && !flagged[j] {
                out.push(values[j]);
            }
        }
        d += 1;
    }
    out
}

/// Repairs cells of `column` that are missing or outside the valid range.
///
/// Flags in runs of at most `run_threshold` cells take the median of the
/// nearest unflagged neighbors; longer runs take the mean of the unflagged
/// readings in the preceding `mean_window_ms`.
pub fn repair_values(table: &DataTable, column: &str, cfg: &DetectorConfig) -> Result<(DataTable, RepairReport)> {
    let values = table.num(column)?.to_vec();
    let flagged: Vec<bool> = values.iter().map(|&v| cfg.flags(v)).collect();
    let detector = format!("range[{}, {}] on {column}", cfg.valid_min, cfg.valid_max);
    if flagged.iter().all(|&f| f) && !values.is_empty() {
        return Err(Error::IrreparableColumn(column.to_string()));
    }
    if !flagged.iter().any(|&f| f) {
        return Ok((table.clone(), RepairReport { detector, repaired_cells: Vec::new() }));
    }
    let ts = table.num(TIMESTAMP).ok();
    let mut repaired = values.clone();
    let mut cells = Vec::new();

    for (_, range) in table.groups(UE_ID) {
        if range.clone().all(|i| flagged[i]) {
            return Err(Error::IrreparableColumn(column.to_string()));
        }
        let mut i = range.start;
        while i < range.end {
            if !flagged[i] {
                i += 1;
                continue;
            }
            let start = i;
            while i < range.end && flagged[i] {
                i += 1;
            }
            let run = start..i;

            let window_mean = || -> Option<f64> {
                let ts = ts?;
                let t0 = ts[start];
                let picked: Vec<f64> = (range.start..start)
                    .rev()
                    .filter(|&j| !flagged[j])
                    .take_while(|&j| ts[j] >= t0 - cfg.mean_window_ms)
                    .map(|j| values[j])
                    .collect();
                (!picked.is_empty()).then(|| picked.iter().sum::<f64>() / picked.len() as f64)
            };
            let long_fill = (run.len() > cfg.run_threshold).then(|| {
                window_mean().or_else(|| (range.start..start).rev().find(|&j| !flagged[j]).map(|j| values[j]))
            });

            for r in run {
                let (new, method) = match long_fill {
                    Some(Some(m)) => (m, RepairMethod::WindowMean),
                    _ => {
                        let mut nb = nearest_unflagged(&values, &flagged, range.clone(), r, cfg.neighbor_window.max(1));
                        let m = median(&mut nb).ok_or_else(|| Error::IrreparableColumn(column.to_string()))?;
                        (m, RepairMethod::NeighborMedian)
                    }
                };
                repaired[r] = new;
                cells.push(RepairedCell {
                    row: r,
                    column: column.to_string(),
                    old: (!is_missing(values[r])).then_some(values[r]),
                    new,
                    method,
                });
            }
        }
    }
    let mut out = table.clone();
    out.set_numeric(column, repaired)?;
    Ok((out, RepairReport { detector, repaired_cells: cells }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeConfig {
    /// Minimum deviation from the centered rolling median, in CQI steps.
    pub spike_delta: f64,
    /// Neighbors on each side (50 gives the 101-row centered window).
    pub half_window: usize,
    /// Preceding and succeeding medians must agree within this.
    pub agreement: f64,
    pub min_value: f64,
    pub max_value: f64,
}

impl Default for SpikeConfig {
    fn default() -> Self {
        Self { spike_delta: 4.0, half_window: 50, agreement: 1.0, min_value: 1.0, max_value: 15.0 }
    }
}

fn valid_level(v: f64, cfg: &SpikeConfig) -> bool {
    !is_missing(v) && v.fract() == 0.0 && v >= cfg.min_value && v <= cfg.max_value
}

/// Marks spike cells of one contiguous group.
fn detect_spikes(v: &[f64], cfg: &SpikeConfig) -> Vec<bool> {
    let n = v.len();
    let h = cfg.half_window;
    let mut buf = Vec::with_capacity(2 * h + 1);
    let med = |lo: usize, hi: usize, buf: &mut Vec<f64>| {
        buf.clear();
        buf.extend(v[lo..hi].iter().copied().filter(|x| !is_missing(*x)));
        median(buf)
    };
    (0..n)
        .map(|i| {
            if !valid_level(v[i], cfg) {
                return true;
            }
            let lo = i.saturating_sub(h);
            let hi = (i + h + 1).min(n);
            let Some(center) = med(lo, hi, &mut buf) else { return false };
            if (v[i] - center).abs() < cfg.spike_delta {
                return false;
            }
            // A side cut short by a trace edge may hold nothing but the rest
            // of the run; then the centered test alone decides.
            let min_side = (h / 5).max(1);
            if i - lo < min_side || hi - i - 1 < min_side {
                return true;
            }
            match (med(lo, i, &mut buf), med(i + 1, hi, &mut buf)) {
                (Some(b), Some(a)) => (b - a).abs() <= cfg.agreement,
                _ => true,
            }
        })
        .collect()
}

/// Replaces ephemeral drops (or jumps) of an integer target such as wbCQI.
///
/// A cell is a spike when it sits at least `spike_delta` away from the
/// centered rolling median while the medians of its preceding and succeeding
/// halves agree; cells that are not a valid level are always spikes. Within
/// `half_window / 5` rows of a trace edge the halves are not compared. Each
/// spike becomes the median of up to `half_window` non-spike values on each
/// side (truncated at trace edges), rounded and clamped to the valid levels.
pub fn repair_target_spikes(table: &DataTable, target: &str, cfg: &SpikeConfig) -> Result<(DataTable, RepairReport)> {
    let values = table.num(target)?.to_vec();
    let mut repaired = values.clone();
    let mut cells = Vec::new();
    for (_, range) in table.groups(UE_ID) {
        let v = &values[range.clone()];
        let spikes = detect_spikes(v, cfg);
        for i in (0..v.len()).filter(|&i| spikes[i]) {
            let mut around: Vec<f64> = (0..i)
                .rev()
                .filter(|&j| !spikes[j])
                .take(cfg.half_window)
                .chain((i + 1..v.len()).filter(|&j| !spikes[j]).take(cfg.half_window))
                .map(|j| v[j])
                .collect();
            let new = match median(&mut around) {
                Some(m) => m.round().clamp(cfg.min_value, cfg.max_value),
                None => continue,
            };
            let row = range.start + i;
            if new.to_bits() == values[row].to_bits() {
                continue;
            }
            repaired[row] = new;
            cells.push(RepairedCell {
                row,
                column: target.to_string(),
                old: (!is_missing(values[row])).then_some(values[row]),
                new,
                method: RepairMethod::TargetSpikeMedian,
            });
        }
    }
    let mut out = table.clone();
    out.set_numeric(target, repaired)?;
    let detector = format!(
        "spike: |x - median{}| >= {} with side medians within {}",
        2 * cfg.half_window + 1,
        cfg.spike_delta,
        cfg.agreement
    );
    Ok((out, RepairReport { detector, repaired_cells: cells }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub min: f64,
    pub max: f64,
}

impl ColumnRange {
    pub fn is_degenerate(&self) -> bool {
        self.max <= self.min
    }

    /// Scales into [0, 1], clamping values outside the fitted range.
    pub fn apply(&self, v: f64) -> f64 {
        if is_missing(v) {
            v
        } else if self.is_degenerate() {
            0.0
        } else {
            ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        }
    }

    pub fn invert(&self, u: f64) -> f64 {
        if is_missing(u) {
            u
        } else {
            self.min + u * (self.max - self.min)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub columns: BTreeMap<String, ColumnRange>,
}

impl NormalizationParams {
    pub fn degenerate(&self) -> Vec<&str> {
        self.columns.iter().filter(|(_, r)| r.is_degenerate()).map(|(n, _)| n.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&ColumnRange> {
        self.columns.get(name)
    }
}

fn fit_range(values: &[f64]) -> ColumnRange {
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values.iter().filter(|v| !is_missing(**v)) {
        min = min.min(v);
        max = max.max(v);
    }
    if min > max {
        ColumnRange { min: 0.0, max: 0.0 }
    } else {
        ColumnRange { min, max }
    }
}

/// Fits min-max ranges on the named columns only.
pub fn fit_normalization(table: &DataTable, columns: &[String]) -> Result<NormalizationParams> {
    let mut out = BTreeMap::new();
    for c in columns {
        out.insert(c.clone(), fit_range(table.num(c)?));
    }
    Ok(NormalizationParams { columns: out })
}

/// Min-max scales numeric columns to [0, 1].
///
/// Without `params`, ranges are fitted on every numeric column of `table`.
/// With `params`, exactly those columns are scaled with the stored ranges and
/// clamped. Degenerate columns map to 0.
pub fn normalize(table: &DataTable, params: Option<&NormalizationParams>) -> Result<(DataTable, NormalizationParams)> {
    let params = match params {
        Some(p) => p.clone(),
        None => NormalizationParams {
            columns: table
                .numeric_names()
                .into_iter()
                .map(|n| {
                    let r = fit_range(table.num(&n).expect("numeric column"));
                    (n, r)
                })
                .collect(),
        },
    };
    let mut out = table.clone();
    for (name, range) in &params.columns {
        let scaled = out.num(name)?.iter().map(|&v| range.apply(v)).collect();
        out.set_numeric(name, scaled)?;
    }
    Ok((out, params))
}

/// Maps scaled columns back to their original units.
pub fn denormalize(table: &DataTable, params: &NormalizationParams) -> Result<DataTable> {
    let mut out = table.clone();
    for (name, range) in &params.columns {
        let v = out.num(name)?.iter().map(|&u| range.invert(u)).collect();
        out.set_numeric(name, v)?;
    }
    Ok(out)
}
