//! Two-level ecological cruise control on a signalized corridor.
//!
//! The library pairs a chance-constrained dynamic-programming velocity
//! planner ([`planner`]) with a safety-enforcing model-predictive cruise
//! controller ([`mpc`]), and closes the loop in a deterministic
//! single-lane traffic simulator ([`sim`]). The [`report`] module adds
//! energy accounting, paired controller comparisons and Pareto sweeps.

pub mod config;
pub mod corridor;
pub mod idm;
pub mod mpc;
pub mod planner;
pub mod plots;
pub mod qp;
pub mod report;
pub mod sim;
pub mod vehicle;

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("wheel torque {torque} N·m outside [{min}, {max}]")]
    TorqueOutOfBounds { torque: f64, min: f64, max: f64 },
    #[error("spatial step infeasible: velocity update gives v' = {v_next} <= 0")]
    StepInfeasible { v_next: f64 },
    #[error("no feasible plan from the requested start state")]
    NoFeasiblePlan,
    #[error("empty distribution")]
    EmptyDistribution,
    #[error("collision in traffic model at t = {t} s (gap {gap} m)")]
    TrafficCollision { t: f64, gap: f64 },
    #[error("simulation aborted: {0}")]
    SimulationAborted(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
