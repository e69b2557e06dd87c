use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::env::SlaSpec;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SliceLedger {
    pub violation_ticks: u64,
    pub total_ticks: u64,
    pub accrued_penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PenaltyLedger {
    pub slices: BTreeMap<String, SliceLedger>,
    pub monitoring_cost: f64,
}

impl PenaltyLedger {
    pub fn record(&mut self, slice: &str, violated: bool, penalty_rate: f64) {
        let e = self.slices.entry(slice.to_string()).or_default();
        e.total_ticks += 1;
        if violated {
            e.violation_ticks += 1;
            e.accrued_penalty = e.violation_ticks as f64 * penalty_rate;
        }
    }

    pub fn violation_ticks(&self, slice: &str) -> u64 {
        self.slices.get(slice).map_or(0, |s| s.violation_ticks)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlaVerdict {
    pub slice_id: String,
    pub met: bool,
    pub good_fraction: f64,
    pub violation_ticks: u64,
    pub total_ticks: u64,
    pub penalty: f64,
}

/// A slice meets its SLA iff its share of good ticks reaches the guarantee
/// quantile. Slices without ticks are reported as met.
pub fn sla_audit(ledger: &PenaltyLedger, specs: &[SlaSpec]) -> Vec<SlaVerdict> {
    specs
        .iter()
        .map(|s| {
            let l = ledger.slices.get(&s.slice_id).copied().unwrap_or_default();
            let good_fraction =
                if l.total_ticks == 0 { 1.0 } else { 1.0 - l.violation_ticks as f64 / l.total_ticks as f64 };
            SlaVerdict {
                slice_id: s.slice_id.clone(),
                met: good_fraction >= s.guarantee_quantile,
                good_fraction,
                violation_ticks: l.violation_ticks,
                total_ticks: l.total_ticks,
                penalty: l.violation_ticks as f64 * s.penalty_per_violation_tick,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger(bad: u64, total: u64) -> PenaltyLedger {
        let mut l = PenaltyLedger::default();
        for i in 0..total {
            l.record("e", i < bad, 2.5);
        }
        l
    }

    #[test]
    fn boundary_arithmetic() {
        let spec = [SlaSpec { slice_id: "e".into(), penalty_per_violation_tick: 2.5, ..SlaSpec::default() }];
        let v = &sla_audit(&ledger(0, 100), &spec)[0];
        assert!(v.met && v.penalty == 0.0);
        assert!(sla_audit(&ledger(4, 100), &spec)[0].met);
        let v = &sla_audit(&ledger(6, 100), &spec)[0];
        assert!(!v.met);
        assert_eq!(v.penalty, 6.0 * 2.5);
        assert_eq!(ledger(6, 100).slices["e"].accrued_penalty, 15.0);
    }
}
