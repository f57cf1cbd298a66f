use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ScenarioDistribution, ScenarioDraw, ScenarioEvaluator, StreamSeed};
use crate::dynamics::ScenarioScore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub draw: ScenarioDraw,
    /// `None` when the evaluation failed; see `failure`.
    pub score: Option<ScenarioScore>,
    pub failure: Option<String>,
    /// Nominal-over-proposal likelihood ratio.
    pub weight: f64,
}

/// Scenarios drawn from one proposal and scored once against every
/// monitored branch, in draw-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePool {
    pub proposal: ScenarioDistribution,
    pub samples: Vec<Sample>,
}

impl SamplePool {
    pub fn failed(&self) -> usize {
        self.samples.iter().filter(|s| s.score.is_none()).count()
    }

    /// Successful samples with their scores.
    pub fn scored(&self) -> impl Iterator<Item = (&Sample, &ScenarioScore)> {
        self.samples.iter().filter_map(|s| s.score.as_ref().map(|sc| (s, sc)))
    }
}

/// Draws and scores `n` scenarios from stream stage `stage`. Sample `i`
/// uses stream `(stage, i)`: the draw comes first, then any noise.
pub fn draw_pool<E: ScenarioEvaluator + ?Sized>(
    evaluator: &E,
    proposal: &ScenarioDistribution,
    nominal: &ScenarioDistribution,
    n: usize,
    seed: StreamSeed,
    stage: u64,
) -> SamplePool {
    let samples = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.stream(stage, i as u64);
            let draw = proposal.sample(&mut rng);
            let weight = proposal.likelihood_ratio(nominal, &draw);
            match evaluator.evaluate(&draw, &mut rng) {
                Ok(score) => Sample { draw, score: Some(score), failure: None, weight },
                Err(e) => {
                    log::warn!("scenario {i} of stage {stage} failed: {e}");
                    Sample { draw, score: None, failure: Some(e), weight }
                }
            }
        })
        .collect();
    SamplePool { proposal: proposal.clone(), samples }
}
