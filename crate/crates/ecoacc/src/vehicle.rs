//! Longitudinal vehicle dynamics in the space domain (planner) and the
//! time domain (cruise controller and plant), plus derived braking limits.
//!
//! Torque convention: `torque` is a wheel torque in N·m and the traction
//! force at the contact patch is `torque / wheel_radius`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Physical constants of the longitudinal model, SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// Vehicle mass (kg).
    pub mass: f64,
    /// Wheel rolling radius (m).
    pub wheel_radius: f64,
    /// Frontal cross-section area (m²).
    pub frontal_area: f64,
    /// Air drag coefficient (–).
    pub drag_coeff: f64,
    /// Rolling resistance coefficient, constant term (–).
    pub roll_coeff: f64,
    /// Rolling resistance coefficient, speed term (s/m).
    pub roll_coeff_speed: f64,
    /// Air density (kg/m³).
    pub air_density: f64,
    /// Gravity (m/s²).
    pub gravity: f64,
    /// Most negative wheel torque, braking (N·m, < 0).
    pub torque_min: f64,
    /// Largest wheel torque, traction (N·m, > 0).
    pub torque_max: f64,
    /// Planner acceleration lower bound (m/s², < 0).
    pub accel_min: f64,
    /// Planner acceleration upper bound (m/s², > 0).
    pub accel_max: f64,
    /// Planner floor speed (m/s, > 0); the spatial dynamics divide by v.
    pub v_min_plan: f64,
    /// Speed limit (m/s).
    pub v_max: f64,
}

impl Default for VehicleParams {
    /// Representative mid-size-sedan constants. Absolute energy numbers
    /// reported by the simulator depend on this choice.
    fn default() -> Self {
        VehicleParams {
            mass: 1600.0,
            wheel_radius: 0.31,
            frontal_area: 2.3,
            drag_coeff: 0.30,
            roll_coeff: 0.010,
            roll_coeff_speed: 0.0003,
            air_density: 1.206,
            gravity: 9.81,
            torque_min: -2500.0,
            torque_max: 1500.0,
            accel_min: -3.0,
            accel_max: 2.5,
            v_min_plan: 1.0,
            v_max: 15.0,
        }
    }
}

/// Braking capability derived from the strongest admissible brake torque.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrakingLimits {
    /// Guaranteed deceleration under max braking on flat road (m/s², < 0).
    pub a_dec_max: f64,
    /// Time to come to rest from `v_max` at that deceleration (s).
    pub t_stop_max: f64,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        self.validate_with(false)
    }

    /// `allow_weak_braking` permits a braking authority weaker than the
    /// planner's acceleration lower bound.
    pub fn validate_with(&self, allow_weak_braking: bool) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("wheel_radius", self.wheel_radius),
            ("frontal_area", self.frontal_area),
            ("air_density", self.air_density),
            ("gravity", self.gravity),
        ];
        for (name, value) in positive {
            if !(value > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0")));
            }
        }
        if !(self.torque_min < 0.0 && self.torque_max > 0.0) {
            return Err(Error::InvalidParameter(
                "torque bounds must satisfy torque_min < 0 < torque_max".into(),
            ));
        }
        if !(self.accel_min < 0.0 && self.accel_max > 0.0) {
            return Err(Error::InvalidParameter(
                "accel bounds must satisfy accel_min < 0 < accel_max".into(),
            ));
        }
        if !(0.0 < self.v_min_plan && self.v_min_plan < self.v_max) {
            return Err(Error::InvalidParameter(
                "speeds must satisfy 0 < v_min_plan < v_max".into(),
            ));
        }
        let limits = braking_limits(self);
        if !allow_weak_braking && limits.a_dec_max > self.accel_min {
            return Err(Error::InvalidParameter(format!(
                "braking authority {:.3} m/s² weaker than planner bound {:.3} m/s²",
                limits.a_dec_max, self.accel_min
            )));
        }
        Ok(())
    }
}

/// Planner state at a position node: velocity and elapsed travel time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanState {
    pub v: f64,
    pub t: f64,
}

/// Cruise-controller state: distance to the upcoming stop bar, gap to the
/// front vehicle, and own velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccState {
    pub d_tl: f64,
    pub d_f: f64,
    pub v: f64,
}

/// Longitudinal acceleration from wheel torque at speed `v` on grade
/// `theta` (rad). A stationary vehicle whose traction does not exceed
/// rolling resistance is held at rest rather than rolled backward.
pub fn traction_accel(p: &VehicleParams, v: f64, torque: f64, theta: f64) -> Result<f64> {
    if torque < p.torque_min || torque > p.torque_max {
        return Err(Error::TorqueOutOfBounds {
            torque,
            min: p.torque_min,
            max: p.torque_max,
        });
    }
    let traction = torque / (p.mass * p.wheel_radius);
    let rolling = p.gravity * (theta.cos() * (p.roll_coeff + p.roll_coeff_speed * v) - theta.sin());
    let drag = p.air_density * p.frontal_area * p.drag_coeff * v * v / (2.0 * p.mass);
    let a = traction - rolling - drag;
    if v == 0.0 && traction <= p.gravity * p.roll_coeff {
        return Ok(a.max(0.0));
    }
    Ok(a)
}

/// One spatial step of the planner dynamics: from `(v, t)` at a position
/// node to the next node `ds` metres downstream.
pub fn step_space(p: &VehicleParams, s: PlanState, torque: f64, ds: f64) -> Result<PlanState> {
    if ds == 0.0 {
        return Ok(s);
    }
    let a = traction_accel(p, s.v, torque, 0.0)?;
    let v_next = s.v + a * ds / s.v;
    if v_next <= 0.0 {
        return Err(Error::StepInfeasible { v_next });
    }
    Ok(PlanState {
        v: v_next,
        t: s.t + ds / v_next,
    })
}

/// Resistance force of the cruise-controller model: constant rolling
/// coefficient plus quadratic drag, flat road (N).
pub fn resistance_force(p: &VehicleParams, v: f64) -> f64 {
    p.mass * p.gravity * p.roll_coeff
        + 0.5 * p.air_density * p.frontal_area * p.drag_coeff * v * v
}

/// One sampling period of the cruise-controller model. Velocity is clamped
/// at zero; the gap integrates the front-vehicle speed `v_f`.
pub fn step_time(p: &VehicleParams, s: AccState, torque: f64, v_f: f64, t_s: f64) -> AccState {
    let v_next =
        (s.v + t_s / p.mass * (torque / p.wheel_radius - resistance_force(p, s.v))).max(0.0);
    AccState {
        d_tl: s.d_tl - t_s * s.v,
        d_f: s.d_f + t_s * (v_f - s.v),
        v: v_next,
    }
}

/// One sampling period of the simulation plant. Same kinematics as
/// [`step_time`] but with the full acceleration model (speed-dependent
/// rolling resistance), so the controller's simplified model is
/// deliberately mismatched against it.
pub fn plant_step(p: &VehicleParams, s: AccState, torque: f64, v_f: f64, t_s: f64) -> AccState {
    let a = traction_accel(p, s.v, torque, 0.0).unwrap_or(0.0);
    AccState {
        d_tl: s.d_tl - t_s * s.v,
        d_f: s.d_f + t_s * (v_f - s.v),
        v: (s.v + t_s * a).max(0.0),
    }
}

/// Wheel torque that exactly balances rolling resistance and drag at
/// speed `v` on flat road, so acceleration is zero.
pub fn holding_torque(p: &VehicleParams, v: f64) -> f64 {
    p.wheel_radius
        * (p.mass * p.gravity * (p.roll_coeff + p.roll_coeff_speed * v)
            + 0.5 * p.air_density * p.frontal_area * p.drag_coeff * v * v)
}

/// Guaranteed deceleration under max braking and the worst-case stopping
/// time from the speed limit.
pub fn braking_limits(p: &VehicleParams) -> BrakingLimits {
    let a_dec_max = p.torque_min / (p.mass * p.wheel_radius) - p.gravity * p.roll_coeff;
    BrakingLimits {
        a_dec_max,
        t_stop_max: -p.v_max / a_dec_max,
    }
}
