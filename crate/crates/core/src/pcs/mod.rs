//! Proactive control loop over a simulated multi-slice RAN.

mod actions;
mod control;
mod env;
pub mod fixtures;
mod run;
mod sla;

use serde::{Deserialize, Serialize};

pub use actions::{ActionEvent, ActionKind};
pub use control::{decide_action, predict_step, DecisionInput, DeployedModel, PredictOutcome};
pub use env::{
    env_step, level_fields, monitor_collect, EnvConfig, EnvState, GnbConfig, Mobility, QualityTier, RejectedAction,
    ScenarioScript, ScriptEvent, SlaSpec, SliceConfig, TimedEvent, UeState,
};
pub use run::{run_loop, Controller, Detection, LoopConfig, LoopModels, Placement, RunOutput, TickRecord};
pub use sla::{sla_audit, PenaltyLedger, SlaVerdict, SliceLedger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitoringLevel {
    Coarse,
    Fine,
}
