//! Affine server power model.
//!
//! A running server draws `idle_fraction * peak` at zero utilization and rises
//! linearly to `peak` at full utilization. Standby draws a flat amount.

use serde::{Deserialize, Serialize};

use crate::cluster::MachineState;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerModel {
    /// Fraction of peak power drawn by an idle running machine.
    pub idle_fraction: f64,
    /// Absolute draw of a machine in standby, in watts.
    pub standby_watts: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel { idle_fraction: 0.5, standby_watts: 0.0 }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.idle_fraction.is_finite() && (0.0..=1.0).contains(&self.idle_fraction)) {
            return Err(Error::invalid("power.idle_fraction", format!("must be in [0, 1], got {}", self.idle_fraction)));
        }
        if !(self.standby_watts.is_finite() && self.standby_watts >= 0.0) {
            return Err(Error::invalid("power.standby_watts", format!("must be >= 0, got {}", self.standby_watts)));
        }
        Ok(())
    }

    /// Draw of a running machine with the given peak at utilization `u`.
    pub fn running_watts(&self, peak_power: f64, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        peak_power * (self.idle_fraction + (1.0 - self.idle_fraction) * u)
    }
}

/// Instantaneous power draw of a machine in `state` at unified utilization `u`.
///
/// A booting machine (woken but not yet ready) is treated as running idle.
pub fn power_draw(state: MachineState, peak_power: f64, u: f64, model: &PowerModel) -> f64 {
    match state {
        MachineState::Running => model.running_watts(peak_power, u),
        MachineState::Standby => model.standby_watts,
    }
}
