//! Fault-scenario sampling and exceedance-probability estimation.

mod ce;
mod distribution;
mod estimate;
mod evaluator;
mod pool;
mod rng;

use thiserror::Error;

pub use ce::{ce_optimize, ce_update, cross_entropy_estimate, CeIteration, CeOutcome, CeParams, CeUpdate, StopRule};
pub use distribution::{DurationFamily, ScenarioDistribution, ScenarioDraw};
pub use estimate::{
    estimate_from_pool, exceeds, importance_estimate, monte_carlo_estimate, EstimatorResult,
    Exceedance, Method, Target,
};
pub use evaluator::{EngineEvaluator, ScenarioEvaluator, DEFAULT_NOISE_SCALE, NOMINAL_FAULT_RATE};
pub use pool::{draw_pool, Sample, SamplePool};
pub use rng::{StreamSeed, STAGE_CE, STAGE_FINAL, STAGE_MONTE_CARLO, STAGE_SWEEP};

#[derive(Debug, Error, PartialEq)]
pub enum RareEventError {
    #[error("invalid scenario distribution: {0}")]
    Distribution(String),
    #[error("no elite samples at level {level}")]
    DegenerateElite { level: f64 },
    #[error("{0}")]
    Contract(String),
}
