//! The tick loop wiring State, Monitor, Predict and Action.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::anomaly::{categorize, detect, score_window, summarize_window, AnomalyKind, ClusterModel, ScoreConfig, ScoreOutcome, Window};
use crate::error::{Error, Result};
use crate::ingest::MonitoringRecord;
use crate::kb::{FeedbackEntry, KnowledgeBase};

use super::actions::{ActionEvent, ActionKind};
use super::control::{decide_action, predict_step, DecisionInput, DeployedModel, PredictOutcome};
use super::env::{env_step, monitor_collect, EnvConfig, EnvState, QualityTier, RejectedAction, ScenarioScript};
use super::sla::PenaltyLedger;
use super::MonitoringLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    /// Plans with the last reported CQI; no reservation, no internal loop.
    Reactive,
    /// Plans with model predictions, reserves PRBs for the top slice and runs
    /// anomaly detection with model swapping.
    Proactive,
}

/// Where the predictor's output goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Feeds the Action stage and the anomaly stage.
    Predict,
    /// Feeds the anomaly stage only; allocation uses reported CQI.
    Monitor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub controller: Controller,
    pub placement: Placement,
    pub initial_level: MonitoringLevel,
    pub coarse_cost_per_record: f64,
    pub fine_cost_per_record: f64,
    pub reserve_margin_prbs: u32,
    /// Plan with min(prediction, last report) instead of the prediction alone.
    pub conservative: bool,
    pub window_ticks: u64,
    pub history_len: usize,
    pub score: ScoreConfig,
    /// Keep every monitoring record in the output.
    pub keep_records: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            controller: Controller::Proactive,
            placement: Placement::Predict,
            initial_level: MonitoringLevel::Coarse,
            coarse_cost_per_record: 1.0,
            fine_cost_per_record: 2.5,
            reserve_margin_prbs: 10,
            conservative: true,
            window_ticks: 50,
            history_len: 20,
            score: ScoreConfig::default(),
            keep_records: false,
        }
    }
}

impl LoopConfig {
    pub fn reactive() -> Self {
        Self { controller: Controller::Reactive, reserve_margin_prbs: 0, ..Self::default() }
    }
}

/// Models available to the loop. `active` names the one deployed at start.
#[derive(Debug, Clone, Default)]
pub struct LoopModels {
    pub registry: BTreeMap<String, DeployedModel>,
    pub active: Option<String>,
    pub clusters: Option<ClusterModel>,
}

impl LoopModels {
    pub fn single(model: DeployedModel) -> Self {
        let id = model.id().to_string();
        Self { registry: [(id.clone(), model)].into_iter().collect(), active: Some(id), clusters: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub tick: u64,
    pub window: Window,
    pub score: f64,
    pub class: Option<AnomalyKind>,
    pub swapped_to: Option<String>,
}

/// Per-tick view used for invariant checks and reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub prb_usage: Vec<u32>,
    pub prb_total: Vec<u32>,
    pub tiers: BTreeMap<String, Option<QualityTier>>,
    pub violations: BTreeMap<String, bool>,
    pub ue_count: usize,
    pub model_id: Option<String>,
    pub level: MonitoringLevel,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunOutput {
    pub ledger: PenaltyLedger,
    pub events: Vec<ActionEvent>,
    pub rejected: Vec<RejectedAction>,
    pub feedback: Vec<FeedbackEntry>,
    pub detections: Vec<Detection>,
    pub ticks: Vec<TickRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<MonitoringRecord>,
}

impl RunOutput {
    pub fn events_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }
}

/// Runs `ticks` iterations of env step, monitor, predict, anomaly scoring,
/// decide and apply. Each iteration audits the SLA after its actions take
/// effect, so violations come from estimation error and shortfall rather than
/// from the plant moving under a stale allocation.
pub fn run_loop(
    env: &EnvConfig,
    script: &ScenarioScript,
    cfg: &LoopConfig,
    models: &LoopModels,
    seed: u64,
    ticks: u64,
    kb: Option<&mut KnowledgeBase>,
) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    if ticks == 0 {
        return Ok(out);
    }
    if let Some(id) = &models.active {
        if !models.registry.contains_key(id) {
            return Err(Error::NotFound(format!("model `{id}`")));
        }
    }
    let proactive = cfg.controller == Controller::Proactive;
    let mut state = EnvState::new(env, seed)?;
    let mut level = cfg.initial_level;
    let mut active = if proactive { models.active.clone() } else { None };
    let mut history: Vec<Window> = Vec::new();
    let mut win_records: Vec<MonitoringRecord> = Vec::new();
    let mut win_preds: Vec<Option<f64>> = Vec::new();
    let mut win_complete = true;
    let slas = env.slas();

    for i in 0..ticks {
        state = env_step(&state, env, script, &[]);
        let tick = state.tick;
        let records = monitor_collect(&state, env, level);
        out.ledger.monitoring_cost += records.len() as f64
            * match level {
                MonitoringLevel::Coarse => cfg.coarse_cost_per_record,
                MonitoringLevel::Fine => cfg.fine_cost_per_record,
            };

        let model = active.as_ref().and_then(|id| models.registry.get(id));
        let (preds, unavailable) = match model {
            Some(m) => match predict_step(m, &records, level)? {
                PredictOutcome::Predictions(p) => (Some(p), false),
                PredictOutcome::Unavailable(_) => (None, true),
            },
            None => (None, false),
        };

        let reported = |r: &MonitoringRecord| r.metric("wb_cqi").unwrap_or(1.0) as u8;
        let mut estimates = BTreeMap::new();
        for (k, r) in records.iter().enumerate() {
            let obs = reported(r);
            let est = match (&preds, cfg.placement) {
                (Some(p), Placement::Predict) if cfg.conservative => p[k].min(obs),
                (Some(p), Placement::Predict) => p[k],
                _ => obs,
            };
            estimates.insert(r.ue_id.clone().unwrap_or_default(), est);
        }

        let mut class = None;
        if proactive {
            win_records.extend(records.iter().cloned());
            match &preds {
                Some(p) => win_preds.extend(p.iter().map(|&c| Some(f64::from(c)))),
                None => {
                    win_preds.extend(std::iter::repeat_n(None, records.len()));
                    win_complete = false;
                }
            }
            if (i + 1) % cfg.window_ticks.max(1) == 0 {
                if win_complete && !win_records.is_empty() {
                    let w = summarize_window(&win_records, &win_preds, env.tick_ms)?;
                    match score_window(&history, &w, &cfg.score) {
                        ScoreOutcome::Score(s) if detect(&s) => {
                            let c = match &models.clusters {
                                Some(cm) => Some(categorize(cm, &w)?),
                                None => None,
                            };
                            out.feedback.push(FeedbackEntry {
                                tick,
                                predicted: w.summary[1],
                                observed: w.summary[0],
                                action_taken: Some(format!(
                                    "anomaly:{}",
                                    c.as_ref().map_or("uncategorized", |c| c.name.as_str())
                                )),
                                ue_id: None,
                            });
                            out.detections.push(Detection {
                                tick,
                                window: w,
                                score: s.value,
                                class: c.as_ref().map(|c| c.name),
                                swapped_to: None,
                            });
                            class = c;
                        }
                        _ => {
                            history.push(w);
                            if history.len() > cfg.history_len {
                                history.remove(0);
                            }
                        }
                    }
                }
                win_records.clear();
                win_preds.clear();
                win_complete = true;
            }
        }

        let actions = decide_action(&DecisionInput {
            tick,
            cfg: env,
            state: &state,
            estimates: &estimates,
            reserve_margin_prbs: if proactive { cfg.reserve_margin_prbs } else { 0 },
            anomaly: class.as_ref().filter(|c| c.recommended_model_id.as_ref().is_some_and(|m| models.registry.contains_key(m))),
            predict_unavailable: unavailable,
            level,
            current_model: active.as_deref(),
        });

        if let Some(p) = &preds {
            let action_id = actions.iter().find(|a| matches!(a.kind, ActionKind::ReallocatePrbs { .. })).map(ActionEvent::id);
            let entries: Vec<FeedbackEntry> = records
                .iter()
                .zip(p)
                .map(|(r, &c)| FeedbackEntry {
                    tick,
                    predicted: f64::from(c),
                    observed: r.metric("wb_cqi").unwrap_or(f64::NAN),
                    action_taken: action_id.clone(),
                    ue_id: r.ue_id.clone(),
                })
                .collect();
            out.feedback.extend(entries);
        }

        for a in &actions {
            match &a.kind {
                ActionKind::SwapModel { model_id } => {
                    active = Some(model_id.clone());
                    history.clear();
                    if let Some(d) = out.detections.last_mut() {
                        d.swapped_to = Some(model_id.clone());
                    }
                }
                ActionKind::SetMonitoringLevel { level: l } => level = *l,
                _ => {}
            }
        }

        state.apply(env, &actions);
        out.rejected.extend(state.rejected.iter().cloned());
        out.events.extend(actions);

        let mut violations = BTreeMap::new();
        for sla in &slas {
            if state.shutdown.contains(&sla.slice_id) {
                continue;
            }
            let violated = state
                .ues
                .iter()
                .filter(|u| u.slice == sla.slice_id)
                .any(|u| u.throughput_bps < sla.min_throughput_bps);
            out.ledger.record(&sla.slice_id, violated, sla.penalty_per_violation_tick);
            violations.insert(sla.slice_id.clone(), violated);
        }
        out.ticks.push(TickRecord {
            tick: state.tick,
            prb_usage: (0..env.gnbs.len()).map(|g| state.prb_usage(g)).collect(),
            prb_total: env.gnbs.iter().map(|g| g.total_prbs).collect(),
            tiers: env.slices.iter().map(|s| (s.sla.slice_id.clone(), state.slice_tier(&s.sla.slice_id))).collect(),
            violations,
            ue_count: state.ues.len(),
            model_id: active.clone(),
            level,
        });
        if cfg.keep_records {
            out.records.extend(records);
        }
    }
    if let Some(kb) = kb {
        kb.append_feedback(&out.feedback)?;
    }
    Ok(out)
}
