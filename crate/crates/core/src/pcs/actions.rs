use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MonitoringLevel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionKind {
    /// Dedicated PRBs per UE id; UEs not listed lose their dedicated PRBs.
    ReallocatePrbs { allocations: BTreeMap<String, u32> },
    DegradeToSd { slice: String },
    RestoreHd { slice: String },
    SwapModel { model_id: String },
    SetMonitoringLevel { level: MonitoringLevel },
    /// Sets the PRBs held back for a slice on one gNB.
    ReserveResources { gnb: String, slice: String, prbs: u32 },
    /// Logged only (power control, cell breathing, ...); no plant effect.
    Advisory { note: String },
    Noop,
}

impl ActionKind {
    pub fn name(&self) -> &'static str {
        match self {
            ActionKind::ReallocatePrbs { .. } => "reallocate_prbs",
            ActionKind::DegradeToSd { .. } => "degrade_to_sd",
            ActionKind::RestoreHd { .. } => "restore_hd",
            ActionKind::SwapModel { .. } => "swap_model",
            ActionKind::SetMonitoringLevel { .. } => "set_monitoring_level",
            ActionKind::ReserveResources { .. } => "reserve_resources",
            ActionKind::Advisory { .. } => "advisory",
            ActionKind::Noop => "noop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionEvent {
    pub tick: u64,
    #[serde(flatten)]
    pub kind: ActionKind,
}

impl ActionEvent {
    /// Stable id used to reference the action from feedback entries.
    pub fn id(&self) -> String {
        format!("{}@{}", self.kind.name(), self.tick)
    }
}
