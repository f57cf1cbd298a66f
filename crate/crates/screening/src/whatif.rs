//! Counterfactual queries: one faulted branch and duration, repeated over
//! noise realisations.

use dynscreen_core::dynamics::{
    snap_steps, DynamicsEngine, DynamicsError, NoisePath, Propagator,
};
use dynscreen_core::overload::{overload_result, risk_classify, RiskZone, SafetyPolicy, SusceptanceSchedule};
use dynscreen_core::rare_event::StreamSeed;
use dynscreen_core::FaultScenario;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WHATIF_SCHEMA_VERSION: u32 = 1;
/// Stream stage of what-if samples; disjoint from the screening stages.
pub const STAGE_WHATIF: u64 = 1 << 22;
pub const MAX_WHATIF_SAMPLES: usize = 100_000;
const SUMMARY_BRANCHES: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum WhatIfError {
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("simulation failed: {0}")]
    Simulation(String),
}

impl From<DynamicsError> for WhatIfError {
    fn from(e: DynamicsError) -> Self {
        WhatIfError::Simulation(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub faulted_branch: usize,
    /// Fault duration in seconds.
    pub tau: f64,
    /// Absolute noise intensity; defaults to the screening noise scale times `β`.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Threshold on the total overload seconds.
    pub gamma: f64,
    #[serde(rename = "n")]
    pub samples: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchProbability {
    pub branch: usize,
    /// `P[S_b ≥ T*]` over the request's samples.
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPeak {
    pub branch: usize,
    pub max_ratio: f64,
    pub overload_seconds: f64,
}

/// The first sample's trajectory, reduced to its most loaded branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub fault_steps: usize,
    pub global_overload: f64,
    pub peaks: Vec<BranchPeak>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub schema_version: u32,
    pub request: WhatIfRequest,
    pub sigma: f64,
    pub seed: u64,
    /// `P[S_global ≥ γ]`.
    pub estimate: f64,
    pub std_error: f64,
    pub zone: RiskZone,
    /// Branches with a positive probability, largest first.
    pub branches: Vec<BranchProbability>,
    pub trajectory: TrajectorySummary,
}

impl WhatIfRequest {
    pub fn validate(&self, branches: usize) -> Result<(), WhatIfError> {
        let bad = |m: String| Err(WhatIfError::Invalid(m));
        if self.faulted_branch >= branches {
            return bad(format!("branch {} does not exist", self.faulted_branch));
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return bad(format!("tau {} must be a non-negative number", self.tau));
        }
        if let Some(s) = self.sigma {
            if !(s.is_finite() && s >= 0.0) {
                return bad(format!("sigma {s} must be a non-negative number"));
            }
        }
        if !self.gamma.is_finite() {
            return bad("gamma must be finite".into());
        }
        if self.samples == 0 || self.samples > MAX_WHATIF_SAMPLES {
            return bad(format!("n must be between 1 and {MAX_WHATIF_SAMPLES}"));
        }
        Ok(())
    }
}

/// Runs a what-if query. Sample `i` draws its noise from stream
/// `(STAGE_WHATIF, i)` of the request seed (or `default_seed`).
pub fn run_whatif(
    engine: &DynamicsEngine,
    policy: &SafetyPolicy,
    noise_scale: f64,
    default_seed: u64,
    request: &WhatIfRequest,
) -> Result<WhatIfResponse, WhatIfError> {
    let grid = engine.grid();
    request.validate(grid.n_branches())?;
    let a = request.faulted_branch;
    let sigma = request.sigma.unwrap_or(noise_scale * grid.branches()[a].beta);
    let seed = request.seed.unwrap_or(default_seed);
    let streams = StreamSeed(seed);
    let horizon = engine.settings().horizon;
    let scenario = FaultScenario::new(Some(a), request.tau, sigma, horizon);
    let t_star = policy.max_overload_seconds;

    let scores = (0..request.samples)
        .into_par_iter()
        .map(|i| engine.score(&scenario, &mut streams.stream(STAGE_WHATIF, i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let n = scores.len() as f64;
    let estimate = scores.iter().filter(|s| s.global >= request.gamma).count() as f64 / n;
    let std_error = (estimate * (1.0 - estimate) / n).sqrt();
    let monitored = engine.monitored();
    let mut branches: Vec<BranchProbability> = (0..monitored.len())
        .map(|m| BranchProbability {
            branch: monitored[m],
            probability: scores.iter().filter(|s| s.overload_seconds[m] >= t_star).count() as f64 / n,
        })
        .filter(|b| b.probability > 0.0)
        .collect();
    branches.sort_by(|x, y| y.probability.total_cmp(&x.probability).then(x.branch.cmp(&y.branch)));

    // Same stream as sample 0, so the summary is that sample's path.
    let ss = engine.state_space(&scenario)?;
    let dt = engine.settings().dt;
    let k_tau = snap_steps(request.tau, dt, engine.total_steps());
    let propagator = Propagator::new(&ss, dt)?;
    let traj = if sigma > 0.0 {
        let path = NoisePath::sample(&mut streams.stream(STAGE_WHATIF, 0), dt, k_tau);
        propagator.stochastic(engine.initial_state(), &path, request.tau, horizon)?
    } else {
        propagator.deterministic(engine.initial_state(), request.tau, horizon)?
    };
    let result = overload_result(&traj, grid, monitored, &SusceptanceSchedule::from_trajectory(&traj));
    let mut peaks: Vec<BranchPeak> = monitored
        .iter()
        .enumerate()
        .map(|(m, &b)| BranchPeak { branch: b, max_ratio: result.max_ratio[m], overload_seconds: result.per_branch[m] })
        .collect();
    peaks.sort_by(|x, y| y.max_ratio.total_cmp(&x.max_ratio).then(x.branch.cmp(&y.branch)));
    peaks.truncate(SUMMARY_BRANCHES);

    Ok(WhatIfResponse {
        schema_version: WHATIF_SCHEMA_VERSION,
        request: request.clone(),
        sigma,
        seed,
        estimate,
        std_error,
        zone: risk_classify(estimate, policy).expect("estimate in [0, 1]"),
        branches,
        trajectory: TrajectorySummary { fault_steps: k_tau, global_overload: result.global, peaks },
    })
}
