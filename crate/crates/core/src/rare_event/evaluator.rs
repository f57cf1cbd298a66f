use rand_chacha::ChaCha8Rng;

use super::ScenarioDraw;
use crate::dynamics::{DynamicsEngine, ScenarioScore};
use crate::scenario::FaultScenario;

/// Default ratio of fault-on noise intensity to the faulted branch's susceptance.
pub const DEFAULT_NOISE_SCALE: f64 = 0.03;
/// Default rate of the exponential fault-duration law (mean 10 s).
pub const NOMINAL_FAULT_RATE: f64 = 0.1;

/// Scores a drawn scenario on every monitored branch. Implementations must
/// be deterministic given the draw and the stream state.
pub trait ScenarioEvaluator: Sync {
    fn monitored_count(&self) -> usize;
    fn evaluate(&self, draw: &ScenarioDraw, rng: &mut ChaCha8Rng) -> Result<ScenarioScore, String>;
}

/// Evaluates draws with the dynamics engine; the faulted branch noise is
/// `noise_scale · β` (zero gives the deterministic model).
#[derive(Debug)]
pub struct EngineEvaluator<'a> {
    pub engine: &'a DynamicsEngine,
    pub noise_scale: f64,
}

impl EngineEvaluator<'_> {
    pub fn scenario(&self, draw: &ScenarioDraw) -> FaultScenario {
        let sigma = draw
            .branch
            .map(|b| self.noise_scale * self.engine.grid().branches()[b].beta)
            .unwrap_or(0.0);
        FaultScenario::new(draw.branch, draw.duration, sigma, self.engine.settings().horizon)
    }
}

impl ScenarioEvaluator for EngineEvaluator<'_> {
    fn monitored_count(&self) -> usize {
        self.engine.monitored().len()
    }

    fn evaluate(&self, draw: &ScenarioDraw, rng: &mut ChaCha8Rng) -> Result<ScenarioScore, String> {
        self.engine.score(&self.scenario(draw), rng).map_err(|e| e.to_string())
    }
}
