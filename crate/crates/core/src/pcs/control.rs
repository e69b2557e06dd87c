//! Predict and Action stages of the loop.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::anomaly::AnomalyClass;
use crate::error::Result;
use crate::features::{Availability, FeatureSet};
use crate::ingest::MonitoringRecord;
use crate::models::{to_cqi, ModelArtifact};

use super::actions::{ActionEvent, ActionKind};
use super::env::{level_fields, EnvConfig, EnvState, QualityTier, UeState};
use super::MonitoringLevel;

/// A trained model together with the feature set it reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployedModel {
    pub artifact: ModelArtifact,
    pub feature_set: FeatureSet,
}

impl DeployedModel {
    pub fn id(&self) -> &str {
        &self.artifact.id
    }

    pub fn availability(&self, level: MonitoringLevel) -> Availability {
        let fields: BTreeSet<String> = level_fields(level).iter().map(|s| s.to_string()).collect();
        self.feature_set.availability(&fields)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictOutcome {
    /// One CQI per record, in record order.
    Predictions(Vec<u8>),
    /// The model needs fields the current monitoring level does not sample.
    Unavailable(Vec<String>),
}

/// Predicts a reportable CQI for every record, or signals that the model
/// cannot run at this monitoring level.
pub fn predict_step(model: &DeployedModel, records: &[MonitoringRecord], level: MonitoringLevel) -> Result<PredictOutcome> {
    if let Availability::Violations(v) = model.availability(level) {
        return Ok(PredictOutcome::Unavailable(v));
    }
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        match model.feature_set.vector_from_record(r) {
            Ok(x) => out.push(to_cqi(model.artifact.model.predict(&x)?)),
            Err(missing) => return Ok(PredictOutcome::Unavailable(missing)),
        }
    }
    Ok(PredictOutcome::Predictions(out))
}

/// Everything the Action stage looks at for one tick.
#[derive(Debug, Clone)]
pub struct DecisionInput<'a> {
    pub tick: u64,
    pub cfg: &'a EnvConfig,
    pub state: &'a EnvState,
    /// CQI the allocation should plan with, per UE id.
    pub estimates: &'a BTreeMap<String, u8>,
    pub reserve_margin_prbs: u32,
    pub anomaly: Option<&'a AnomalyClass>,
    pub predict_unavailable: bool,
    pub level: MonitoringLevel,
    pub current_model: Option<&'a str>,
}

/// Network and internal-loop decisions for one tick.
///
/// PRBs are planned per gNB: first the SLA minimum of every UE in slice
/// priority order (lower slices starve when the cell runs out), then the
/// reservation for the top slice, then the video tiers. A video slice keeps HD
/// only if HD fits on every gNB; once one slice falls to SD, every slice below
/// it does too. Remaining PRBs top up SD and fixed-demand UEs in priority order.
pub fn decide_action(input: &DecisionInput<'_>) -> Vec<ActionEvent> {
    let DecisionInput { tick, cfg, state, estimates, .. } = *input;
    let mut actions = Vec::new();
    let ev = |kind| ActionEvent { tick, kind };

    if input.predict_unavailable && input.level == MonitoringLevel::Coarse {
        actions.push(ev(ActionKind::SetMonitoringLevel { level: MonitoringLevel::Fine }));
    }
    if let Some(model_id) = input.anomaly.and_then(|c| c.recommended_model_id.as_deref()) {
        if input.current_model != Some(model_id) {
            actions.push(ev(ActionKind::SwapModel { model_id: model_id.to_string() }));
        }
    }

    let order: Vec<String> = cfg.priority_order().into_iter().filter(|s| !state.shutdown.contains(s)).collect();
    let n_gnb = cfg.gnbs.len();
    let mut remaining: Vec<u32> = cfg.gnbs.iter().map(|g| g.total_prbs).collect();
    let mut alloc: BTreeMap<String, u32> = BTreeMap::new();
    let groups: Vec<Vec<Vec<&UeState>>> = order
        .iter()
        .map(|s| {
            let mut per_gnb = vec![Vec::new(); n_gnb];
            for u in state.ues.iter().filter(|u| &u.slice == s) {
                per_gnb[u.serving].push(u);
            }
            per_gnb
        })
        .collect();
    let need = |u: &UeState, rate: f64| -> u32 {
        let cqi = estimates.get(&u.id).copied().unwrap_or(u.reported_cqi);
        let per_prb = cfg.gnbs[u.serving].prb_bandwidth_hz * cfg.cqi_efficiency.get(cqi);
        (rate / per_prb).ceil() as u32
    };
    let grant = |alloc: &mut BTreeMap<String, u32>, remaining: &mut [u32], u: &UeState, target: u32| {
        let have = alloc.get(&u.id).copied().unwrap_or(0);
        let extra = target.saturating_sub(have).min(remaining[u.serving]);
        remaining[u.serving] -= extra;
        alloc.insert(u.id.clone(), have + extra);
    };

    for (s, per_gnb) in order.iter().zip(&groups) {
        let sla = &cfg.slice(s).expect("configured slice").sla;
        for u in per_gnb.iter().flatten() {
            grant(&mut alloc, &mut remaining, u, need(u, sla.min_throughput_bps));
        }
    }

    if input.reserve_margin_prbs > 0 {
        if let Some(top) = order.first() {
            for (g, gnb) in cfg.gnbs.iter().enumerate() {
                let r = input.reserve_margin_prbs.min(remaining[g]);
                remaining[g] -= r;
                actions.push(ev(ActionKind::ReserveResources { gnb: gnb.id.clone(), slice: top.clone(), prbs: r }));
            }
        }
    }

    let mut tiers: BTreeMap<&str, QualityTier> = BTreeMap::new();
    let mut degraded = false;
    for (s, per_gnb) in order.iter().zip(&groups) {
        if !cfg.slice(s).expect("configured slice").video {
            continue;
        }
        let hd_fits = !degraded
            && per_gnb.iter().enumerate().all(|(g, ues)| {
                let extra: u32 = ues
                    .iter()
                    .map(|u| {
                        need(u, cfg.hd_demand_bps * u.demand_scale).saturating_sub(alloc.get(&u.id).copied().unwrap_or(0))
                    })
                    .sum();
                extra <= remaining[g]
            });
        if hd_fits {
            for u in per_gnb.iter().flatten() {
                grant(&mut alloc, &mut remaining, u, need(u, cfg.hd_demand_bps * u.demand_scale));
            }
            tiers.insert(s, QualityTier::Hd);
        } else {
            degraded = true;
            tiers.insert(s, QualityTier::Sd);
        }
    }
    for (s, per_gnb) in order.iter().zip(&groups) {
        let sc = cfg.slice(s).expect("configured slice");
        let rate = match tiers.get(s.as_str()) {
            Some(QualityTier::Hd) => continue,
            Some(QualityTier::Sd) => cfg.sd_demand_bps,
            None => sc.demand_bps,
        };
        for u in per_gnb.iter().flatten() {
            grant(&mut alloc, &mut remaining, u, need(u, rate * u.demand_scale));
        }
    }

    actions.push(ev(ActionKind::ReallocatePrbs { allocations: alloc }));
    for (s, t) in tiers {
        match (state.slice_tier(s), t) {
            (Some(QualityTier::Hd), QualityTier::Sd) => actions.push(ev(ActionKind::DegradeToSd { slice: s.to_string() })),
            (Some(QualityTier::Sd), QualityTier::Hd) => actions.push(ev(ActionKind::RestoreHd { slice: s.to_string() })),
            _ => {}
        }
    }
    actions
}
