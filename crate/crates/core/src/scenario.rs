use serde::{Deserialize, Serialize};

/// One counterfactual contingency: which branch faults, for how long, and how
/// noisy the faulted branch is while the fault is on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultScenario {
    /// Faulted branch index, `None` for the no-fault scenario.
    pub faulted_branch: Option<usize>,
    /// Fault duration in seconds, exactly as sampled (before grid snapping).
    pub duration: f64,
    /// Noise strength on the faulted branch susceptance (per-unit).
    pub sigma: f64,
    /// Simulation horizon in seconds.
    pub horizon: f64,
}

impl FaultScenario {
    pub fn new(faulted_branch: Option<usize>, duration: f64, sigma: f64, horizon: f64) -> Self {
        Self {
            faulted_branch,
            duration,
            sigma,
            horizon,
        }
    }

    pub fn no_fault(horizon: f64) -> Self {
        Self::new(None, 0.0, 0.0, horizon)
    }

    pub fn is_valid(&self) -> bool {
        self.duration >= 0.0 && self.sigma >= 0.0 && self.horizon > 0.0
    }
}
