//! Monitoring-trace ingestion and the seeded synthetic trace generator.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::channel::{mcs_from_cqi, ChannelModel};
use crate::error::{Error, Result};
use crate::table::{is_missing, ColumnData, DataTable, MISSING};

pub const TARGET: &str = "wb_cqi";
pub const TIMESTAMP: &str = "timestamp_ms";
pub const UE_ID: &str = "ue_id";
pub const GNB_ID: &str = "gnb_id";
pub const SCENARIO: &str = "scenario";

/// One timestamped multi-layer metric sample for one UE.
///
/// Identifiers are optional only so that a privacy filter can strip them;
/// parsed and generated records always carry both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringRecord {
    pub timestamp_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ue_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gnb_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    pub metrics: BTreeMap<String, f64>,
}

impl MonitoringRecord {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied().filter(|v| !is_missing(*v))
    }

    /// Flat JSON object: identifiers and metrics at the top level, missing as null.
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert(TIMESTAMP.into(), Value::from(self.timestamp_ms));
        if let Some(u) = &self.ue_id {
            m.insert(UE_ID.into(), Value::from(u.clone()));
        }
        if let Some(g) = &self.gnb_id {
            m.insert(GNB_ID.into(), Value::from(g.clone()));
        }
        if let Some(s) = &self.scenario {
            m.insert(SCENARIO.into(), Value::from(s.clone()));
        }
        for (k, v) in &self.metrics {
            let v = if is_missing(*v) { Value::Null } else { Value::from(*v) };
            m.insert(k.clone(), v);
        }
        Value::Object(m)
    }
}

fn parse_line(line_no: usize, line: &str) -> Result<MonitoringRecord> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
    let Value::Object(obj) = value else {
        return Err(Error::Parse { line: line_no, message: "not a JSON object".into() });
    };

    let ident = |key: &str| -> Result<String> {
        match obj.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Number(n)) => Ok(n.to_string()),
            Some(_) => Err(Error::NonNumeric { line: line_no, field: key.into() }),
            None => Err(Error::MissingKey { line: line_no, key: key.into() }),
        }
    };
    let timestamp_ms = match obj.get(TIMESTAMP) {
        Some(Value::Number(n)) => n
            .as_u64()
            .or_else(|| n.as_f64().filter(|f| *f >= 0.0 && f.fract() == 0.0).map(|f| f as u64))
            .ok_or_else(|| Error::NonNumeric { line: line_no, field: TIMESTAMP.into() })?,
        Some(_) => return Err(Error::NonNumeric { line: line_no, field: TIMESTAMP.into() }),
        None => return Err(Error::MissingKey { line: line_no, key: TIMESTAMP.into() }),
    };
    let ue_id = Some(ident(UE_ID)?);
    let gnb_id = Some(ident(GNB_ID)?);
    let scenario = match obj.get(SCENARIO) {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Null) | None => None,
        Some(_) => return Err(Error::NonNumeric { line: line_no, field: SCENARIO.into() }),
    };

    let mut metrics = BTreeMap::new();
    let mut take = |key: &str, v: &Value| -> Result<()> {
        let x = match v {
            Value::Number(n) => n.as_f64().unwrap_or(MISSING),
            Value::Null => MISSING,
            _ => return Err(Error::NonNumeric { line: line_no, field: key.into() }),
        };
        metrics.insert(key.to_string(), x);
        Ok(())
    };
    for (k, v) in &obj {
        match k.as_str() {
            TIMESTAMP | UE_ID | GNB_ID | SCENARIO => {}
            "metrics" if v.is_object() => {
                for (mk, mv) in v.as_object().into_iter().flatten() {
                    take(mk, mv)?;
                }
            }
            _ => take(k, v)?,
        }
    }
    Ok(MonitoringRecord { timestamp_ms, ue_id, gnb_id, scenario, metrics })
}

/// Parses a JSON-lines stream into records. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_record_lines(stream: &str) -> Result<Vec<MonitoringRecord>> {
    stream
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(i + 1, l))
        .collect()
}

/// Parses a JSON-lines trace into a table with one row per line and columns
/// sorted by name.
pub fn parse_records(stream: &str) -> Result<DataTable> {
    records_to_table(&parse_record_lines(stream)?)
}

/// Builds a table from records. A metric absent from a record becomes a
/// missing cell.
pub fn records_to_table(records: &[MonitoringRecord]) -> Result<DataTable> {
    let metric_names: BTreeSet<&str> =
        records.iter().flat_map(|r| r.metrics.keys().map(String::as_str)).collect();
    let has_scenario = records.iter().any(|r| r.scenario.is_some());

    let mut cols: BTreeMap<&str, ColumnData> = BTreeMap::new();
    let text = |f: &dyn Fn(&MonitoringRecord) -> Option<String>| {
        ColumnData::Text(records.iter().map(|r| f(r).unwrap_or_default()).collect())
    };
    cols.insert(UE_ID, text(&|r| r.ue_id.clone()));
    cols.insert(GNB_ID, text(&|r| r.gnb_id.clone()));
    if has_scenario {
        cols.insert(SCENARIO, text(&|r| r.scenario.clone()));
    }
    cols.insert(TIMESTAMP, ColumnData::Numeric(records.iter().map(|r| r.timestamp_ms as f64).collect()));
    for name in metric_names {
        let v = records.iter().map(|r| r.metrics.get(name).copied().unwrap_or(MISSING)).collect();
        cols.insert(name, ColumnData::Numeric(v));
    }

    let mut table = DataTable::new();
    for (name, data) in cols {
        match data {
            ColumnData::Numeric(v) => table.push_numeric(name, v)?,
            ColumnData::Text(v) => table.push_text(name, v)?,
        }
    }
    Ok(table)
}

/// Inverse of [`records_to_table`].
pub fn table_to_records(table: &DataTable) -> Result<Vec<MonitoringRecord>> {
    let ts = table.num(TIMESTAMP)?;
    let get_text = |name: &str| table.text(name).ok();
    let (ues, gnbs, scen) = (get_text(UE_ID), get_text(GNB_ID), get_text(SCENARIO));
    let metric_cols: Vec<(&str, &[f64])> = table
        .columns()
        .iter()
        .filter(|c| c.name != TIMESTAMP)
        .filter_map(|c| match &c.data {
            ColumnData::Numeric(v) => Some((c.name.as_str(), v.as_slice())),
            ColumnData::Text(_) => None,
        })
        .collect();
    Ok((0..table.row_count())
        .map(|r| MonitoringRecord {
            timestamp_ms: ts[r] as u64,
            ue_id: ues.map(|u| u[r].clone()),
            gnb_id: gnbs.map(|g| g[r].clone()),
            scenario: scen.map(|s| s[r].clone()),
            metrics: metric_cols.iter().map(|(n, v)| (n.to_string(), v[r])).collect(),
        })
        .collect())
}

/// Serializes a table as JSON lines, one object per row.
pub fn table_to_jsonl(table: &DataTable) -> Result<String> {
    let mut out = String::new();
    for rec in table_to_records(table)? {
        out.push_str(&serde_json::to_string(&rec.to_json())?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Static,
    Pedestrian,
    CircularDrive,
    DriveAway,
    RandomWaypoint,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Static,
        ScenarioKind::Pedestrian,
        ScenarioKind::CircularDrive,
        ScenarioKind::DriveAway,
        ScenarioKind::RandomWaypoint,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Static => "static",
            ScenarioKind::Pedestrian => "pedestrian",
            ScenarioKind::CircularDrive => "circular_drive",
            ScenarioKind::DriveAway => "drive_away",
            ScenarioKind::RandomWaypoint => "random_waypoint",
        }
    }
}

fn default_start() -> f64 {
    120.0
}
fn default_min() -> f64 {
    60.0
}
fn default_max() -> f64 {
    360.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceScenario {
    pub name: ScenarioKind,
    pub duration_ms: u64,
    pub sample_period_ms: u64,
    pub gnb_position: [f64; 2],
    pub speed_mps: f64,
    /// Initial UE distance from the gNB (also the circle radius).
    #[serde(default = "default_start")]
    pub start_distance_m: f64,
    /// Annulus that random walks and waypoints stay inside.
    #[serde(default = "default_min")]
    pub min_distance_m: f64,
    #[serde(default = "default_max")]
    pub max_distance_m: f64,
}

impl TraceScenario {
    pub fn new(name: ScenarioKind, duration_ms: u64, sample_period_ms: u64, speed_mps: f64) -> Self {
        Self {
            name,
            duration_ms,
            sample_period_ms,
            gnb_position: [0.0, 0.0],
            speed_mps,
            start_distance_m: default_start(),
            min_distance_m: default_min(),
            max_distance_m: default_max(),
        }
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_ms / self.sample_period_ms) as usize
    }

    fn validate(&self) -> Result<()> {
        if self.duration_ms == 0 || self.sample_period_ms == 0 {
            return Err(Error::Config("scenario duration and sample period must be > 0".into()));
        }
        if !(self.min_distance_m > 0.0 && self.min_distance_m < self.max_distance_m) {
            return Err(Error::Config("scenario needs 0 < min_distance < max_distance".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    #[serde(default = "CorruptionSpec::default_spike")]
    pub spike_value: i64,
    pub spike_probability: f64,
    pub max_run_length: usize,
}

impl CorruptionSpec {
    fn default_spike() -> i64 {
        3
    }

    pub fn none() -> Self {
        Self { spike_value: 3, spike_probability: 0.0, max_run_length: 1 }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.spike_probability) {
            return Err(Error::Config("spike_probability must lie in [0, 1]".into()));
        }
        if self.max_run_length == 0 {
            return Err(Error::Config("max_run_length must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self { spike_value: 3, spike_probability: 0.02, max_run_length: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub scenarios: Vec<TraceScenario>,
    pub noise_sigma_db: f64,
    pub static_field_count: usize,
    pub corruption: CorruptionSpec,
    #[serde(default)]
    pub channel: ChannelModel,
}

impl GeneratorConfig {
    /// Five mobility scenarios of `samples_each` samples at 100 ms, all kept
    /// within 40..145 m of the gNB so the true CQI stays in 8..15. The
    /// drive-away speed is scaled to reach 130 m by the end of the trace.
    pub fn standard(seed: u64, samples_each: u64) -> Self {
        let period = 100;
        let duration = samples_each * period;
        let (near, far) = (40.0, 145.0);
        let drive_speed = (130.0 - near) / (duration as f64 / 1000.0).max(1.0);
        let speeds = [0.0, 1.4, 8.0, drive_speed, 1.5];
        let scenarios = ScenarioKind::ALL
            .iter()
            .zip(speeds)
            .map(|(&k, s)| {
                let mut sc = TraceScenario::new(k, duration, period, s);
                sc.min_distance_m = near;
                sc.max_distance_m = far;
                sc.start_distance_m = match k {
                    ScenarioKind::Static => 60.0,
                    ScenarioKind::CircularDrive => 120.0,
                    ScenarioKind::DriveAway => near,
                    _ => 100.0,
                };
                sc
            })
            .collect();
        Self {
            seed,
            scenarios,
            noise_sigma_db: 1.0,
            static_field_count: 7,
            corruption: CorruptionSpec::default(),
            channel: ChannelModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_sigma_db < 0.0 || !self.noise_sigma_db.is_finite() {
            return Err(Error::Config("noise_sigma_db must be finite and >= 0".into()));
        }
        self.corruption.validate()?;
        self.scenarios.iter().try_for_each(TraceScenario::validate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTrace {
    /// Observed trace, with corruption injected into `wb_cqi`.
    pub observed: DataTable,
    /// `timestamp_ms`, `ue_id`, `scenario`, uncorrupted `wb_cqi`, and distance.
    pub ground_truth: DataTable,
    pub corrupted_rows: Vec<usize>,
    pub static_fields: Vec<String>,
}

/// Per-interval counters with no dependency on the channel.
const COUNTER_FIELDS: [&str; 12] = [
    "mac_dl_bytes",
    "mac_dl_prbs",
    "mac_sr_count",
    "mac_ul_bytes",
    "mac_ul_prbs",
    "pdcp_rx_bytes",
    "pdcp_rx_pkts",
    "pdcp_tx_bytes",
    "pdcp_tx_pkts",
    "rlc_dl_buffer",
    "rlc_ul_buffer",
    "rrc_meas_events",
];

struct Mobility {
    pos: [f64; 2],
    heading: f64,
    waypoint: Option<[f64; 2]>,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn random_in_annulus(rng: &mut ChaCha8Rng, center: [f64; 2], lo: f64, hi: f64) -> [f64; 2] {
    let r = rng.random_range(lo..hi);
    let a = rng.random_range(0.0..2.0 * PI);
    [center[0] + r * a.cos(), center[1] + r * a.sin()]
}

impl Mobility {
    fn new(sc: &TraceScenario) -> Self {
        let g = sc.gnb_position;
        Self { pos: [g[0] + sc.start_distance_m, g[1]], heading: 0.0, waypoint: None }
    }

    fn advance(&mut self, sc: &TraceScenario, t_s: f64, dt_s: f64, rng: &mut ChaCha8Rng) {
        let g = sc.gnb_position;
        let step = sc.speed_mps * dt_s;
        match sc.name {
            ScenarioKind::Static => {}
            ScenarioKind::DriveAway => self.pos = [g[0] + sc.start_distance_m + sc.speed_mps * t_s, g[1]],
            ScenarioKind::CircularDrive => {
                let r = sc.start_distance_m;
                let a = sc.speed_mps * t_s / r;
                self.pos = [g[0] + r * a.cos(), g[1] + r * a.sin()];
            }
            ScenarioKind::Pedestrian => {
                self.heading += rng.random_range(-0.05..0.05);
                let next = [self.pos[0] + step * self.heading.cos(), self.pos[1] + step * self.heading.sin()];
                let d = dist(next, g);
                if d < sc.min_distance_m || d > sc.max_distance_m {
                    self.heading += PI;
                } else {
                    self.pos = next;
                }
            }
            ScenarioKind::RandomWaypoint => {
                let target = *self
                    .waypoint
                    .get_or_insert_with(|| random_in_annulus(rng, g, sc.min_distance_m, sc.max_distance_m));
                let d = dist(self.pos, target);
                if d <= step {
                    self.pos = target;
                    self.waypoint = None;
                } else {
                    self.pos[0] += step * (target[0] - self.pos[0]) / d;
                    self.pos[1] += step * (target[1] - self.pos[1]) / d;
                }
            }
        }
    }
}

/// Generates an observed trace and its uncorrupted ground truth.
///
/// Per sample: distance from the gNB gives path loss, which gives RSRP and the
/// SINR proxy; the true CQI quantizes that SINR. RSRP, RSRQ and PHR carry
/// Gaussian measurement noise; `mcs1_dl` is derived from the true CQI.
pub fn generate_trace(cfg: &GeneratorConfig) -> Result<GeneratedTrace> {
    cfg.validate()?;
    let ch = &cfg.channel;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma_db.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let gauss = |rng: &mut ChaCha8Rng, scale: f64| {
        if cfg.noise_sigma_db == 0.0 {
            0.0
        } else {
            scale * noise.sample(rng)
        }
    };

    let mut cols: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut ue_ids = Vec::new();
    let mut gnb_ids = Vec::new();
    let mut scen_names = Vec::new();
    let mut distances = Vec::new();
    let push = |cols: &mut BTreeMap<String, Vec<f64>>, k: &str, v: f64| {
        cols.entry(k.to_string()).or_default().push(v);
    };

    for (idx, sc) in cfg.scenarios.iter().enumerate() {
        let mut mob = Mobility::new(sc);
        let dt_s = sc.sample_period_ms as f64 / 1000.0;
        for k in 0..sc.sample_count() {
            let t_ms = k as u64 * sc.sample_period_ms;
            if k > 0 {
                mob.advance(sc, t_ms as f64 / 1000.0, dt_s, &mut rng);
            }
            let d = dist(mob.pos, sc.gnb_position);
            let sinr = ch.sinr_db(d, 0.0);
            let cqi = f64::from(ch.cqi_from_sinr(sinr));

            ue_ids.push(format!("ue{idx}"));
            gnb_ids.push("gnb0".to_string());
            scen_names.push(sc.name.as_str().to_string());
            distances.push(d);

            push(&mut cols, TIMESTAMP, t_ms as f64);
            push(&mut cols, TARGET, cqi);
            push(&mut cols, "mcs1_dl", mcs_from_cqi(cqi));
            push(&mut cols, "rsrp", (ch.rsrp_dbm(d) + gauss(&mut rng, 1.0)).min(0.0));
            push(&mut cols, "rsrq", ch.rsrq_db(sinr + gauss(&mut rng, 1.0)).min(0.0));
            push(&mut cols, "phr", ch.phr_db(d) + gauss(&mut rng, 1.0));
            push(&mut cols, "timing_advance", (d / 78.12).round());
            push(&mut cols, "ul_sinr_db", sinr - 8.0 + gauss(&mut rng, 2.0));
            let retx = ((16.0 - cqi) / 4.0 + gauss(&mut rng, 0.5)).round().max(0.0);
            push(&mut cols, "harq_retx", retx);
            push(&mut cols, "dl_bler", (0.1 + 0.02 * rng.random_range(-1.0..1.0f64)).max(0.0));
            for name in COUNTER_FIELDS {
                push(&mut cols, name, rng.random_range(0.0..100.0f64).round());
            }
        }
    }

    let static_fields: Vec<String> = (0..cfg.static_field_count).map(|i| format!("static_field_{i:02}")).collect();
    let n = ue_ids.len();
    for (i, name) in static_fields.iter().enumerate() {
        cols.insert(name.clone(), vec![1000.0 + i as f64; n]);
    }

    let mut truth = DataTable::new();
    truth.push_numeric(TIMESTAMP, cols[TIMESTAMP].clone())?;
    truth.push_text(UE_ID, ue_ids.clone())?;
    truth.push_text(SCENARIO, scen_names.clone())?;
    truth.push_numeric(TARGET, cols[TARGET].clone())?;
    truth.push_numeric("distance_m", distances)?;

    let mut all: BTreeMap<String, ColumnData> =
        cols.into_iter().map(|(k, v)| (k, ColumnData::Numeric(v))).collect();
    all.insert(UE_ID.into(), ColumnData::Text(ue_ids));
    all.insert(GNB_ID.into(), ColumnData::Text(gnb_ids));
    all.insert(SCENARIO.into(), ColumnData::Text(scen_names));
    let mut clean = DataTable::new();
    for (k, v) in all {
        match v {
            ColumnData::Numeric(v) => clean.push_numeric(k, v)?,
            ColumnData::Text(v) => clean.push_text(k, v)?,
        }
    }

    let corruption_seed = rng.random::<u64>();
    let (observed, corrupted_rows) = inject_corruption(&clean, &cfg.corruption, corruption_seed)?;
    Ok(GeneratedTrace { observed, ground_truth: truth, corrupted_rows, static_fields })
}

/// Overwrites short runs of `wb_cqi` with the spike value. Runs start at each
/// row with `spike_probability` and last 1..=`max_run_length` rows.
pub fn inject_corruption(table: &DataTable, spec: &CorruptionSpec, seed: u64) -> Result<(DataTable, Vec<usize>)> {
    spec.validate()?;
    let mut out = table.clone();
    let col = out.num_mut(TARGET)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut i = 0;
    while i < col.len() {
        if spec.spike_probability > 0.0 && rng.random::<f64>() < spec.spike_probability {
            let run = rng.random_range(1..=spec.max_run_length);
            for j in i..(i + run).min(col.len()) {
                col[j] = spec.spike_value as f64;
                rows.push(j);
            }
            i += run;
        } else {
            i += 1;
        }
    }
    Ok((out, rows))
}

/// Replaces isolated cells of `column` with `value` (an out-of-range reading or
/// [`MISSING`]). Returns the touched rows.
pub fn inject_invalid(
    table: &DataTable,
    column: &str,
    probability: f64,
    value: f64,
    seed: u64,
) -> Result<(DataTable, Vec<usize>)> {
    let mut out = table.clone();
    let col = out.num_mut(column)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<usize> = (0..col.len()).filter(|_| rng.random::<f64>() < probability).collect();
    for &r in &rows {
        col[r] = value;
    }
    Ok((out, rows))
}
