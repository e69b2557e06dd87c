//! Desk-scale radio model shared by the trace generator and the slice simulator.
//!
//! Log-distance path loss feeds an SINR proxy that is quantized into the 4-bit
//! wideband CQI. None of this aims at radio accuracy; it only has to be monotone
//! and deterministic.

use serde::{Deserialize, Serialize};

pub const CQI_MIN: u8 = 1;
pub const CQI_MAX: u8 = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelModel {
    pub tx_power_dbm: f64,
    pub path_loss_exponent: f64,
    /// Loss at the 1 m reference distance.
    pub reference_loss_db: f64,
    pub noise_floor_dbm: f64,
    /// RSRP is per resource element; this is the offset from total received power.
    pub rsrp_offset_db: f64,
    pub sinr_min_db: f64,
    pub sinr_max_db: f64,
    pub ue_max_power_dbm: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            tx_power_dbm: 20.0,
            path_loss_exponent: 3.5,
            reference_loss_db: 30.0,
            noise_floor_dbm: -95.0,
            rsrp_offset_db: 27.0,
            sinr_min_db: -5.0,
            sinr_max_db: 25.0,
            ue_max_power_dbm: 23.0,
        }
    }
}

impl ChannelModel {
    pub fn path_loss_db(&self, distance_m: f64) -> f64 {
        self.reference_loss_db + 10.0 * self.path_loss_exponent * distance_m.max(1.0).log10()
    }

    /// SINR proxy: tx power minus path loss minus the noise floor, less any
    /// interference margin.
    pub fn sinr_db(&self, distance_m: f64, interference_db: f64) -> f64 {
        self.tx_power_dbm - self.path_loss_db(distance_m) - self.noise_floor_dbm - interference_db
    }

    /// 15 uniform bins over `[sinr_min, sinr_max]`.
    pub fn cqi_from_sinr(&self, sinr_db: f64) -> u8 {
        let width = (self.sinr_max_db - self.sinr_min_db) / f64::from(CQI_MAX);
        let bin = ((sinr_db - self.sinr_min_db) / width).floor();
        if bin.is_nan() || bin < 0.0 {
            CQI_MIN
        } else {
            (bin as i64 + 1).clamp(i64::from(CQI_MIN), i64::from(CQI_MAX)) as u8
        }
    }

    pub fn cqi(&self, distance_m: f64, interference_db: f64) -> u8 {
        self.cqi_from_sinr(self.sinr_db(distance_m, interference_db))
    }

    pub fn rsrp_dbm(&self, distance_m: f64) -> f64 {
        (self.tx_power_dbm - self.path_loss_db(distance_m) - self.rsrp_offset_db).min(0.0)
    }

    /// Maps SINR linearly onto the reportable RSRQ span [-19.5, -3] dB.
    pub fn rsrq_db(&self, sinr_db: f64) -> f64 {
        let frac = ((sinr_db - self.sinr_min_db) / (self.sinr_max_db - self.sinr_min_db)).clamp(0.0, 1.0);
        -19.5 + 16.5 * frac
    }

    /// Uplink power headroom under open-loop power control (P0 = -80 dBm, alpha = 0.8).
    pub fn phr_db(&self, distance_m: f64) -> f64 {
        let required = -80.0 + 0.8 * self.path_loss_db(distance_m);
        (self.ue_max_power_dbm - required).clamp(-23.0, 40.0)
    }
}

/// MCS index the scheduler derives from a CQI report.
pub fn mcs_from_cqi(cqi: f64) -> f64 {
    (1.85 * cqi).round().clamp(0.0, 28.0)
}

/// Interference margin from co-scheduled load on a cell.
pub fn load_interference_db(active_ues: usize, coefficient: f64) -> f64 {
    10.0 * (1.0 + coefficient * active_ues as f64).log10()
}

/// Spectral efficiency (bits/s/Hz) per CQI 1..=15; strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EfficiencyTable([f64; 15]);

impl Default for EfficiencyTable {
    fn default() -> Self {
        Self([
            0.15, 0.23, 0.38, 0.60, 0.88, 1.18, 1.48, 1.91, 2.41, 2.73, 3.32, 3.90, 4.52, 5.12, 5.55,
        ])
    }
}

impl EfficiencyTable {
    pub fn new(values: Vec<f64>) -> Result<Self, String> {
        let arr: [f64; 15] = values
            .try_into()
            .map_err(|v: Vec<f64>| format!("efficiency table needs 15 entries, got {}", v.len()))?;
        if arr.windows(2).any(|w| w[1] <= w[0]) || arr[0] <= 0.0 {
            return Err("efficiency table must be positive and strictly increasing in CQI".into());
        }
        Ok(Self(arr))
    }

    pub fn get(&self, cqi: u8) -> f64 {
        self.0[usize::from(cqi.clamp(CQI_MIN, CQI_MAX) - 1)]
    }
}

impl TryFrom<Vec<f64>> for EfficiencyTable {
    type Error = String;
    fn try_from(v: Vec<f64>) -> Result<Self, String> {
        Self::new(v)
    }
}

impl From<EfficiencyTable> for Vec<f64> {
    fn from(t: EfficiencyTable) -> Self {
        t.0.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cqi_bins_cover_range() {
        let ch = ChannelModel::default();
        assert_eq!(ch.cqi_from_sinr(-100.0), 1);
        assert_eq!(ch.cqi_from_sinr(-5.0), 1);
        assert_eq!(ch.cqi_from_sinr(-3.0), 2);
        assert_eq!(ch.cqi_from_sinr(24.9), 15);
        assert_eq!(ch.cqi_from_sinr(100.0), 15);
    }

    #[test]
    fn cqi_nonincreasing_with_distance() {
        let ch = ChannelModel::default();
        let mut last = u8::MAX;
        for d in (1..600).map(f64::from) {
            let c = ch.cqi(d, 0.0);
            assert!(c <= last);
            last = c;
        }
    }

    #[test]
    fn mcs_mapping_clamped() {
        assert_eq!(mcs_from_cqi(15.0), 28.0);
        assert_eq!(mcs_from_cqi(7.0), 13.0);
        assert_eq!(mcs_from_cqi(0.0), 0.0);
    }

    #[test]
    fn efficiency_table_validated() {
        assert!(EfficiencyTable::new(vec![1.0; 15]).is_err());
        assert!(EfficiencyTable::new(vec![1.0; 3]).is_err());
        let t = EfficiencyTable::default();
        let v: Vec<f64> = t.clone().into();
        assert_eq!(EfficiencyTable::new(v).unwrap(), t);
    }
}
