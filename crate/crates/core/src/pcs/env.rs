//! Simulated multi-slice RAN: UEs move, get served by the nearest gNB and
//! receive throughput from the PRBs the controller gives them.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::channel::{load_interference_db, mcs_from_cqi, ChannelModel, EfficiencyTable, CQI_MAX, CQI_MIN};
use crate::error::{Error, Result};
use crate::ingest::MonitoringRecord;
use crate::kb::PolicySet;
use crate::models::splitmix64;

use super::actions::{ActionEvent, ActionKind};
use super::MonitoringLevel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnbConfig {
    pub id: String,
    pub position: [f64; 2],
    pub total_prbs: u32,
    pub prb_bandwidth_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlaSpec {
    pub slice_id: String,
    pub min_throughput_bps: f64,
    pub guarantee_quantile: f64,
    pub penalty_per_violation_tick: f64,
    /// Lower is more important.
    pub priority: u32,
}

impl Default for SlaSpec {
    fn default() -> Self {
        Self {
            slice_id: String::new(),
            min_throughput_bps: 2e6,
            guarantee_quantile: 0.95,
            penalty_per_violation_tick: 1.0,
            priority: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mobility {
    Static,
    RandomWaypoint { speed_mps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceConfig {
    pub sla: SlaSpec,
    pub ues: usize,
    /// Video UEs switch between the HD and SD demand tiers; others have a
    /// fixed demand.
    #[serde(default)]
    pub video: bool,
    #[serde(default)]
    pub demand_bps: f64,
    pub mobility: Mobility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub tick_ms: u64,
    /// UEs live in `[0, area[0]] x [0, area[1]]` meters.
    pub area: [f64; 2],
    pub min_distance_m: f64,
    pub gnbs: Vec<GnbConfig>,
    pub channel: ChannelModel,
    pub cqi_efficiency: EfficiencyTable,
    pub slices: Vec<SliceConfig>,
    pub hd_demand_bps: f64,
    pub sd_demand_bps: f64,
    pub interference_coefficient: f64,
    /// Per-tick SINR fluctuation.
    pub fading_sigma_db: f64,
    /// Chance that a UE's CQI report is off by one level.
    pub report_error_probability: f64,
    pub policies: PolicySet,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            tick_ms: 100,
            area: [800.0, 300.0],
            min_distance_m: 40.0,
            gnbs: Vec::new(),
            channel: ChannelModel::default(),
            cqi_efficiency: EfficiencyTable::default(),
            slices: Vec::new(),
            hd_demand_bps: 8e6,
            sd_demand_bps: 2.5e6,
            interference_coefficient: 0.2,
            fading_sigma_db: 0.5,
            report_error_probability: 0.05,
            policies: PolicySet::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gnbs.is_empty() {
            return Err(Error::Config("environment needs at least one gNB".into()));
        }
        if self.tick_ms == 0 {
            return Err(Error::Config("tick_ms must be positive".into()));
        }
        let mut ids = BTreeSet::new();
        for s in &self.slices {
            if !ids.insert(&s.sla.slice_id) {
                return Err(Error::Config(format!("duplicate slice `{}`", s.sla.slice_id)));
            }
            if s.sla.min_throughput_bps <= 0.0 {
                return Err(Error::Config(format!("slice `{}` needs a positive SLA throughput", s.sla.slice_id)));
            }
            if !(s.sla.guarantee_quantile > 0.0 && s.sla.guarantee_quantile <= 1.0) {
                return Err(Error::Config(format!("slice `{}` quantile must be in (0, 1]", s.sla.slice_id)));
            }
        }
        let gnb_ids: Vec<String> = self.gnbs.iter().map(|g| g.id.clone()).collect();
        self.policies.validate(&gnb_ids)
    }

    pub fn slice(&self, id: &str) -> Option<&SliceConfig> {
        self.slices.iter().find(|s| s.sla.slice_id == id)
    }

    pub fn gnb_index(&self, id: &str) -> Option<usize> {
        self.gnbs.iter().position(|g| g.id == id)
    }

    /// Slice ids, most important first: the policy order when given, else SLA
    /// priority then id.
    pub fn priority_order(&self) -> Vec<String> {
        let mut ids: Vec<&SliceConfig> = self.slices.iter().collect();
        let pol = &self.policies.slice_priorities;
        let rank = |s: &SliceConfig| pol.iter().position(|p| *p == s.sla.slice_id).unwrap_or(pol.len());
        ids.sort_by(|a, b| {
            rank(a).cmp(&rank(b)).then(a.sla.priority.cmp(&b.sla.priority)).then(a.sla.slice_id.cmp(&b.sla.slice_id))
        });
        ids.into_iter().map(|s| s.sla.slice_id.clone()).collect()
    }

    pub fn slas(&self) -> Vec<SlaSpec> {
        self.slices.iter().map(|s| s.sla.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityTier {
    Hd,
    Sd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeState {
    pub id: String,
    pub slice: String,
    pub position: [f64; 2],
    pub waypoint: Option<[f64; 2]>,
    pub mobility: Mobility,
    /// Index into the configured gNBs.
    pub serving: usize,
    pub tier: Option<QualityTier>,
    pub demand_scale: f64,
    pub distance_m: f64,
    pub sinr_db: f64,
    pub true_cqi: u8,
    pub reported_cqi: u8,
    /// Dedicated PRBs plus this UE's share of its slice reservation.
    pub allocated_prbs: f64,
    pub throughput_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ScriptEvent {
    /// Multiplies the slice's UE count by `factor`, spawning the new UEs
    /// around `at` (or the area center).
    MieSurge { slice: String, factor: f64, at: Option<[f64; 2]> },
    /// Sends every UE of the slice towards `destination`.
    RouteShift { slice: String, destination: [f64; 2] },
    /// Adds interfering load from UEs outside any slice.
    BackgroundLoad { gnb: String, ues: usize },
    DemandDrop { slice: String, factor: f64 },
    ShutdownSlice { slice: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub tick: u64,
    #[serde(flatten)]
    pub event: ScriptEvent,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenarioScript {
    #[serde(default)]
    pub name: String,
    pub events: Vec<TimedEvent>,
}

impl ScenarioScript {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedAction {
    pub action: ActionEvent,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub tick: u64,
    pub seed: u64,
    pub ues: Vec<UeState>,
    /// Dedicated PRBs per UE id.
    pub ue_prbs: BTreeMap<String, u32>,
    /// Slice reservations per (gNB index, slice).
    pub reserves: BTreeMap<(usize, String), u32>,
    pub background: Vec<usize>,
    pub shutdown: BTreeSet<String>,
    pub next_ue: u64,
    pub handovers: usize,
    pub rejected: Vec<RejectedAction>,
}

fn tick_rng(seed: u64, tick: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(tick.wrapping_mul(0x9e37) ^ salt)))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl EnvState {
    /// Places the initial UEs and computes their channel at tick 0.
    pub fn new(cfg: &EnvConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut st = Self {
            tick: 0,
            seed,
            ues: Vec::new(),
            ue_prbs: BTreeMap::new(),
            reserves: BTreeMap::new(),
            background: vec![0; cfg.gnbs.len()],
            shutdown: BTreeSet::new(),
            next_ue: 0,
            handovers: 0,
            rejected: Vec::new(),
        };
        let mut rng = tick_rng(seed, 0, 1);
        for s in &cfg.slices {
            for _ in 0..s.ues {
                let p = [rng.random::<f64>() * cfg.area[0], rng.random::<f64>() * cfg.area[1]];
                st.spawn(cfg, &s.sla.slice_id, p);
            }
        }
        st.update_radio(cfg);
        st.refresh_throughput(cfg);
        Ok(st)
    }

    fn spawn(&mut self, cfg: &EnvConfig, slice: &str, position: [f64; 2]) {
        let sc = cfg.slice(slice).expect("slice exists");
        let serving = nearest_gnb(cfg, position);
        self.ues.push(UeState {
            id: format!("ue{:04}", self.next_ue),
            slice: slice.to_string(),
            position,
            waypoint: None,
            mobility: sc.mobility,
            serving,
            tier: sc.video.then_some(QualityTier::Hd),
            demand_scale: 1.0,
            distance_m: 0.0,
            sinr_db: 0.0,
            true_cqi: CQI_MIN,
            reported_cqi: CQI_MIN,
            allocated_prbs: 0.0,
            throughput_bps: 0.0,
        });
        self.next_ue += 1;
    }

    pub fn active_ues(&self) -> impl Iterator<Item = &UeState> {
        self.ues.iter().filter(|u| !self.shutdown.contains(&u.slice))
    }

    /// Slice UEs plus background load attached to gNB `g`.
    pub fn cell_load(&self, g: usize) -> usize {
        self.ues.iter().filter(|u| u.serving == g).count() + self.background[g]
    }

    /// Dedicated plus reserved PRBs in use on gNB `g`.
    pub fn prb_usage(&self, g: usize) -> u32 {
        let dedicated: u32 = self
            .ues
            .iter()
            .filter(|u| u.serving == g)
            .map(|u| self.ue_prbs.get(&u.id).copied().unwrap_or(0))
            .sum();
        let reserved: u32 = self.reserves.iter().filter(|((gi, _), _)| *gi == g).map(|(_, &p)| p).sum();
        dedicated + reserved
    }

    pub fn slice_tier(&self, slice: &str) -> Option<QualityTier> {
        self.ues.iter().find(|u| u.slice == slice).and_then(|u| u.tier)
    }

    pub fn demand_bps(&self, cfg: &EnvConfig, ue: &UeState) -> f64 {
        let base = match ue.tier {
            Some(QualityTier::Hd) => cfg.hd_demand_bps,
            Some(QualityTier::Sd) => cfg.sd_demand_bps,
            None => cfg.slice(&ue.slice).map_or(0.0, |s| s.demand_bps),
        };
        base * ue.demand_scale
    }

    fn budget_ok(&self, cfg: &EnvConfig) -> Option<String> {
        (0..cfg.gnbs.len()).find_map(|g| {
            let used = self.prb_usage(g);
            (used > cfg.gnbs[g].total_prbs)
                .then(|| format!("gNB `{}` would use {used} of {} PRBs", cfg.gnbs[g].id, cfg.gnbs[g].total_prbs))
        })
    }

    /// Applies one tick's actions. PRB-changing actions are validated
    /// together: if the combined result breaks a gNB budget, all of them are
    /// rejected and the previous allocation stays in force.
    fn apply_actions(&mut self, cfg: &EnvConfig, actions: &[ActionEvent]) {
        let backup = (self.ue_prbs.clone(), self.reserves.clone());
        let mut prb_actions = Vec::new();
        for a in actions {
            match &a.kind {
                ActionKind::ReallocatePrbs { allocations } => {
                    self.ue_prbs = allocations.iter().filter(|(_, &p)| p > 0).map(|(k, &v)| (k.clone(), v)).collect();
                    prb_actions.push(a);
                }
                ActionKind::ReserveResources { gnb, slice, prbs } => match cfg.gnb_index(gnb) {
                    Some(g) => {
                        if *prbs == 0 {
                            self.reserves.remove(&(g, slice.clone()));
                        } else {
                            self.reserves.insert((g, slice.clone()), *prbs);
                        }
                        prb_actions.push(a);
                    }
                    None => self.rejected.push(RejectedAction { action: a.clone(), reason: format!("unknown gNB `{gnb}`") }),
                },
                ActionKind::DegradeToSd { slice } => self.set_tier(slice, QualityTier::Sd),
                ActionKind::RestoreHd { slice } => self.set_tier(slice, QualityTier::Hd),
                _ => {}
            }
        }
        if let Some(reason) = self.budget_ok(cfg) {
            self.ue_prbs = backup.0;
            self.reserves = backup.1;
            for a in prb_actions {
                self.rejected.push(RejectedAction { action: a.clone(), reason: reason.clone() });
            }
        }
    }

    fn set_tier(&mut self, slice: &str, tier: QualityTier) {
        for u in self.ues.iter_mut().filter(|u| u.slice == slice && u.tier.is_some()) {
            u.tier = Some(tier);
        }
    }

    fn apply_event(&mut self, cfg: &EnvConfig, e: &ScriptEvent, rng: &mut ChaCha8Rng) {
        match e {
            ScriptEvent::MieSurge { slice, factor, at } => {
                let current = self.ues.iter().filter(|u| &u.slice == slice).count();
                let extra = ((current as f64) * (factor - 1.0)).round().max(0.0) as usize;
                let center = at.unwrap_or([cfg.area[0] / 2.0, cfg.area[1] / 2.0]);
                let tier = self.slice_tier(slice);
                for _ in 0..extra {
                    let p = [
                        (center[0] + (rng.random::<f64>() - 0.5) * 100.0).clamp(0.0, cfg.area[0]),
                        (center[1] + (rng.random::<f64>() - 0.5) * 100.0).clamp(0.0, cfg.area[1]),
                    ];
                    self.spawn(cfg, slice, p);
                    if let (Some(t), Some(u)) = (tier, self.ues.last_mut()) {
                        u.tier = Some(t);
                    }
                }
            }
            ScriptEvent::RouteShift { slice, destination } => {
                for u in self.ues.iter_mut().filter(|u| &u.slice == slice) {
                    u.waypoint = Some(*destination);
                    if u.mobility == Mobility::Static {
                        u.mobility = Mobility::RandomWaypoint { speed_mps: 15.0 };
                    }
                }
            }
            ScriptEvent::BackgroundLoad { gnb, ues } => {
                if let Some(g) = cfg.gnb_index(gnb) {
                    self.background[g] += ues;
                }
            }
            ScriptEvent::DemandDrop { slice, factor } => {
                for u in self.ues.iter_mut().filter(|u| &u.slice == slice) {
                    u.demand_scale *= factor;
                }
            }
            ScriptEvent::ShutdownSlice { slice } => {
                self.shutdown.insert(slice.clone());
                let ids: BTreeSet<String> = self.ues.iter().filter(|u| &u.slice == slice).map(|u| u.id.clone()).collect();
                self.ue_prbs.retain(|k, _| !ids.contains(k));
                self.reserves.retain(|(_, s), _| s != slice);
            }
        }
    }

    fn move_ues(&mut self, cfg: &EnvConfig, rng: &mut ChaCha8Rng) {
        let dt = cfg.tick_ms as f64 / 1000.0;
        for u in &mut self.ues {
            let Mobility::RandomWaypoint { speed_mps } = u.mobility else { continue };
            let wp = match u.waypoint {
                Some(w) => w,
                None => {
                    let w = [rng.random::<f64>() * cfg.area[0], rng.random::<f64>() * cfg.area[1]];
                    u.waypoint = Some(w);
                    w
                }
            };
            let d = dist(u.position, wp);
            let step = speed_mps * dt;
            if d <= step {
                u.position = wp;
                u.waypoint = None;
            } else {
                u.position[0] += (wp[0] - u.position[0]) / d * step;
                u.position[1] += (wp[1] - u.position[1]) / d * step;
            }
        }
    }

    fn handover(&mut self, cfg: &EnvConfig) {
        self.handovers = 0;
        for u in &mut self.ues {
            let best = nearest_gnb(cfg, u.position);
            if best != u.serving && cfg.policies.handover_allowed(&cfg.gnbs[u.serving].id, &cfg.gnbs[best].id) {
                u.serving = best;
                self.ue_prbs.remove(&u.id);
                self.handovers += 1;
            }
        }
    }

    fn update_radio(&mut self, cfg: &EnvConfig) {
        let mut rng = tick_rng(self.seed, self.tick, 2);
        let fading = Normal::new(0.0, cfg.fading_sigma_db.max(0.0)).expect("finite sigma");
        let loads: Vec<usize> = (0..cfg.gnbs.len()).map(|g| self.cell_load(g)).collect();
        for u in &mut self.ues {
            let g = &cfg.gnbs[u.serving];
            u.distance_m = dist(u.position, g.position).max(cfg.min_distance_m);
            let interference = load_interference_db(loads[u.serving], cfg.interference_coefficient);
            let f = if cfg.fading_sigma_db > 0.0 { fading.sample(&mut rng) } else { 0.0 };
            u.sinr_db = cfg.channel.sinr_db(u.distance_m, interference) + f;
            u.true_cqi = cfg.channel.cqi_from_sinr(u.sinr_db);
            let err = rng.random::<f64>() < cfg.report_error_probability;
            let up = rng.random::<bool>();
            u.reported_cqi = if err {
                if up { (u.true_cqi + 1).min(CQI_MAX) } else { (u.true_cqi - 1).max(CQI_MIN) }
            } else {
                u.true_cqi
            };
        }
    }

    /// Recomputes allocated PRBs and achieved throughput from the current
    /// allocation and true CQI. A (gNB, slice) reservation is shared evenly
    /// among that slice's UEs on the gNB.
    fn refresh_throughput(&mut self, cfg: &EnvConfig) {
        let mut shares: BTreeMap<(usize, String), usize> = BTreeMap::new();
        for u in self.active_ues() {
            *shares.entry((u.serving, u.slice.clone())).or_default() += 1;
        }
        for u in &mut self.ues {
            if self.shutdown.contains(&u.slice) {
                u.allocated_prbs = 0.0;
                u.throughput_bps = 0.0;
                continue;
            }
            let key = (u.serving, u.slice.clone());
            let reserve = self.reserves.get(&key).copied().unwrap_or(0) as f64;
            let n = shares.get(&key).copied().unwrap_or(1).max(1) as f64;
            u.allocated_prbs = f64::from(self.ue_prbs.get(&u.id).copied().unwrap_or(0)) + reserve / n;
            u.throughput_bps =
                u.allocated_prbs * cfg.gnbs[u.serving].prb_bandwidth_hz * cfg.cqi_efficiency.get(u.true_cqi);
        }
    }

    /// Applies actions to the current tick without advancing the plant, then
    /// recomputes throughput. Rejected actions are listed in `rejected`.
    pub fn apply(&mut self, cfg: &EnvConfig, actions: &[ActionEvent]) {
        self.rejected.clear();
        self.apply_actions(cfg, actions);
        self.refresh_throughput(cfg);
    }
}

fn nearest_gnb(cfg: &EnvConfig, p: [f64; 2]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, g) in cfg.gnbs.iter().enumerate() {
        let d = dist(p, g.position);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Advances the plant by one tick: applies the actions (rejecting any that
/// break a PRB budget), then the script events for the new tick, mobility,
/// handovers and the radio/throughput update.
pub fn env_step(state: &EnvState, cfg: &EnvConfig, script: &ScenarioScript, actions: &[ActionEvent]) -> EnvState {
    let mut st = state.clone();
    st.rejected.clear();
    st.apply_actions(cfg, actions);
    st.tick += 1;
    let mut rng = tick_rng(st.seed, st.tick, 3);
    let now = st.tick;
    for e in script.events.iter().filter(|e| e.tick == now) {
        st.apply_event(cfg, &e.event, &mut rng);
    }
    st.move_ues(cfg, &mut rng);
    st.handover(cfg);
    st.update_radio(cfg);
    st.refresh_throughput(cfg);
    st
}

/// Field names a monitoring level samples.
pub fn level_fields(level: MonitoringLevel) -> &'static [&'static str] {
    const COARSE: &[&str] = &["wb_cqi", "mcs1_dl", "cell_load", "demand_bps", "throughput_bps", "allocated_prbs"];
    const FINE: &[&str] = &[
        "wb_cqi",
        "mcs1_dl",
        "cell_load",
        "demand_bps",
        "throughput_bps",
        "allocated_prbs",
        "rsrp",
        "rsrq",
        "phr",
    ];
    match level {
        MonitoringLevel::Coarse => COARSE,
        MonitoringLevel::Fine => FINE,
    }
}

/// One record per active UE holding exactly the level's fields.
pub fn monitor_collect(state: &EnvState, cfg: &EnvConfig, level: MonitoringLevel) -> Vec<MonitoringRecord> {
    let fields = level_fields(level);
    state
        .active_ues()
        .map(|u| {
            let cqi = f64::from(u.reported_cqi);
            let all = [
                ("wb_cqi", cqi),
                ("mcs1_dl", mcs_from_cqi(cqi)),
                ("cell_load", state.cell_load(u.serving) as f64),
                ("demand_bps", state.demand_bps(cfg, u)),
                ("throughput_bps", u.throughput_bps),
                ("allocated_prbs", u.allocated_prbs),
                ("rsrp", cfg.channel.rsrp_dbm(u.distance_m)),
                ("rsrq", cfg.channel.rsrq_db(u.sinr_db)),
                ("phr", cfg.channel.phr_db(u.distance_m)),
            ];
            MonitoringRecord {
                timestamp_ms: state.tick * cfg.tick_ms,
                ue_id: Some(u.id.clone()),
                gnb_id: Some(cfg.gnbs[u.serving].id.clone()),
                scenario: None,
                metrics: all.iter().filter(|(k, _)| fields.contains(k)).map(|(k, v)| (k.to_string(), *v)).collect(),
            }
        })
        .collect()
}
