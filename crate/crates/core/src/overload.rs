//! Overload indicators, safety-polytope checks and operator risk zones.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Trajectory;
use crate::grid::Grid;
use crate::FAULT_SUSCEPTANCE_FACTOR;

#[derive(Debug, Error, PartialEq)]
pub enum OverloadError {
    #[error("probability {0} is outside [0, 1]")]
    Probability(f64),
    #[error("invalid safety policy: {0}")]
    Policy(String),
}

/// Operator thresholds: a monitored element is at risk when it is overloaded
/// for at least `max_overload_seconds`; the probability of that event is
/// mapped to a zone by the two cut points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyPolicy {
    pub max_overload_seconds: f64,
    /// Probabilities below this are safe.
    pub warning_threshold: f64,
    /// Probabilities above this are emergencies.
    pub emergency_threshold: f64,
}

impl Default for SafetyPolicy {
    fn default() -> Self {
        Self { max_overload_seconds: 1.0, warning_threshold: 0.025, emergency_threshold: 0.04 }
    }
}

impl SafetyPolicy {
    pub fn validate(&self) -> Result<(), OverloadError> {
        let ok = self.max_overload_seconds >= 0.0
            && (0.0..=1.0).contains(&self.warning_threshold)
            && (0.0..=1.0).contains(&self.emergency_threshold)
            && self.warning_threshold <= self.emergency_threshold;
        if ok {
            Ok(())
        } else {
            Err(OverloadError::Policy(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskZone {
    Safe,
    Warning,
    Emergency,
}

/// Safe below the warning threshold, emergency strictly above the
/// emergency threshold, warning in between (both ends inclusive).
pub fn risk_classify(probability: f64, policy: &SafetyPolicy) -> Result<RiskZone, OverloadError> {
    if !(0.0..=1.0).contains(&probability) {
        return Err(OverloadError::Probability(probability));
    }
    Ok(if probability < policy.warning_threshold {
        RiskZone::Safe
    } else if probability <= policy.emergency_threshold {
        RiskZone::Warning
    } else {
        RiskZone::Emergency
    })
}

/// Time-varying susceptance: the faulted branch runs at the reduced value
/// for the first `fault_steps` grid points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SusceptanceSchedule {
    pub faulted_branch: Option<usize>,
    pub fault_steps: usize,
}

impl SusceptanceSchedule {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        Self { faulted_branch: traj.faulted_branch, fault_steps: traj.fault_steps }
    }

    pub fn beta(&self, grid: &Grid, branch: usize, step: usize) -> f64 {
        let beta = grid.branches()[branch].beta;
        if self.faulted_branch == Some(branch) && step < self.fault_steps {
            FAULT_SUSCEPTANCE_FACTOR * beta
        } else {
            beta
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverloadResult {
    /// Overload seconds per monitored branch.
    pub per_branch: Vec<f64>,
    pub global: f64,
    /// Largest `|flow| / limit` seen per monitored branch.
    pub max_ratio: Vec<f64>,
}

fn flow(traj: &Trajectory, grid: &Grid, branch: usize, sched: &SusceptanceSchedule, k: usize) -> f64 {
    let (i, j) = grid.endpoints(branch);
    sched.beta(grid, branch, k) * (traj.angle(i, k) - traj.angle(j, k))
}

/// `dt · #{k < K : |flow_k| > limit}`, counting left endpoints only.
pub fn line_overload(traj: &Trajectory, grid: &Grid, branch: usize, sched: &SusceptanceSchedule) -> f64 {
    let limit = grid.branches()[branch].limit;
    let hits = (0..traj.steps())
        .filter(|&k| flow(traj, grid, branch, sched, k).abs() > limit)
        .count();
    hits as f64 * traj.dt
}

pub fn global_overload(traj: &Trajectory, grid: &Grid, monitored: &[usize], sched: &SusceptanceSchedule) -> f64 {
    monitored.iter().map(|&b| line_overload(traj, grid, b, sched)).sum()
}

pub fn overload_result(
    traj: &Trajectory,
    grid: &Grid,
    monitored: &[usize],
    sched: &SusceptanceSchedule,
) -> OverloadResult {
    let per_branch: Vec<f64> = monitored.iter().map(|&b| line_overload(traj, grid, b, sched)).collect();
    let max_ratio = monitored
        .iter()
        .map(|&b| {
            let limit = grid.branches()[b].limit;
            (0..traj.len())
                .map(|k| flow(traj, grid, b, sched, k).abs() / limit)
                .fold(0.0, f64::max)
        })
        .collect();
    OverloadResult { global: per_branch.iter().sum(), per_branch, max_ratio }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeMembership {
    pub inside: bool,
    /// `(branch, |flow| / limit)` for every violated branch.
    pub violations: Vec<(usize, f64)>,
}

/// Checks `|β_ij (θ_i - θ_j)| ≤ p̄_ij` on every branch at nominal susceptance.
pub fn polytope_membership(angles: &[f64], grid: &Grid) -> PolytopeMembership {
    let violations: Vec<(usize, f64)> = grid
        .flows(angles)
        .iter()
        .zip(grid.branches())
        .enumerate()
        .filter_map(|(k, (f, br))| (f.abs() > br.limit).then_some((k, f.abs() / br.limit)))
        .collect();
    PolytopeMembership { inside: violations.is_empty(), violations }
}
