//! Intelligent-driver-model car following for the surrounding traffic.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdmParams {
    /// Desired free-flow speed (m/s).
    pub v0: f64,
    /// Time headway (s).
    pub headway: f64,
    /// Minimum standstill gap (m).
    pub s0: f64,
    /// Maximum acceleration (m/s²).
    pub accel: f64,
    /// Comfortable deceleration (m/s², > 0).
    pub decel: f64,
    /// Free-flow exponent.
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            v0: 14.0,
            headway: 1.5,
            s0: 2.0,
            accel: 1.5,
            decel: 2.0,
            delta: 4.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("v0", self.v0),
            ("headway", self.headway),
            ("s0", self.s0),
            ("accel", self.accel),
            ("decel", self.decel),
            ("delta", self.delta),
        ];
        for (name, value) in positive {
            if !(value > 0.0) {
                return Err(Error::InvalidParameter(format!("idm {name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// IDM acceleration at speed `v` with bumper gap `gap` and approach rate
/// `dv` (positive when closing). A non-positive gap means the traffic
/// model itself produced a collision and the simulation must abort.
pub fn idm_accel(p: &IdmParams, v: f64, gap: f64, dv: f64) -> Result<f64> {
    if gap <= 0.0 {
        return Err(Error::TrafficCollision { t: f64::NAN, gap });
    }
    let s_star = p.s0 + v * p.headway + v * dv / (2.0 * (p.accel * p.decel).sqrt());
    Ok(p.accel * (1.0 - (v / p.v0).powf(p.delta) - (s_star / gap).powi(2)))
}
