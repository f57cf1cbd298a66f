use serde::{Deserialize, Serialize};

use super::{
    draw_pool, CeIteration, RareEventError, SamplePool, ScenarioDistribution, ScenarioEvaluator,
    StreamSeed, STAGE_MONTE_CARLO,
};
use crate::dynamics::ScenarioScore;

/// Whether the event is `S ≥ γ` or `S > γ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exceedance {
    #[default]
    AtLeast,
    Above,
}

pub fn exceeds(score: f64, gamma: f64, mode: Exceedance) -> bool {
    match mode {
        Exceedance::AtLeast => score >= gamma,
        Exceedance::Above => score > gamma,
    }
}

/// Which overload score an estimate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Sum over monitored branches.
    Global,
    /// Position in the monitored list.
    Branch(usize),
}

impl Target {
    pub fn value(&self, score: &ScenarioScore) -> f64 {
        match *self {
            Target::Global => score.global,
            Target::Branch(m) => score.overload_seconds[m],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "mc")]
    MonteCarlo,
    #[serde(rename = "ce-is")]
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub method: Method,
    pub gamma: f64,
    pub exceedance: Exceedance,
    pub estimate: f64,
    pub std_error: f64,
    pub effective_sample_size: f64,
    /// Successfully scored samples in the final estimator.
    pub samples: usize,
    pub failed: usize,
    /// Trajectory evaluations including any CE iterations.
    pub evaluations: usize,
    pub proposal: ScenarioDistribution,
    pub trace: Vec<CeIteration>,
    pub converged: Option<bool>,
    pub warnings: Vec<String>,
}

/// `(1/N) Σ 𝟙(S_k ≥ γ) w_k` over the pool's successful samples, with the
/// standard error taken from the sample second moment of the terms.
pub fn estimate_from_pool(
    pool: &SamplePool,
    gamma: f64,
    target: Target,
    mode: Exceedance,
    method: Method,
) -> EstimatorResult {
    let mut n = 0usize;
    let (mut sum, mut sum_sq, mut wsum, mut wsq) = (0.0, 0.0, 0.0, 0.0);
    for (s, score) in pool.scored() {
        n += 1;
        wsum += s.weight;
        wsq += s.weight * s.weight;
        if exceeds(target.value(score), gamma, mode) {
            sum += s.weight;
            sum_sq += s.weight * s.weight;
        }
    }
    let failed = pool.failed();
    let mut warnings = Vec::new();
    if failed > 0 {
        warnings.push(format!("{failed} scenario evaluations failed and were excluded"));
    }
    if n == 0 {
        warnings.push("no successful samples".into());
        return EstimatorResult {
            method,
            gamma,
            exceedance: mode,
            estimate: 0.0,
            std_error: 0.0,
            effective_sample_size: 0.0,
            samples: 0,
            failed,
            evaluations: pool.samples.len(),
            proposal: pool.proposal.clone(),
            trace: Vec::new(),
            converged: None,
            warnings,
        };
    }
    let nf = n as f64;
    let mut estimate = sum / nf;
    let std_error = match method {
        Method::MonteCarlo => (estimate * (1.0 - estimate) / nf).max(0.0).sqrt(),
        Method::CrossEntropy => ((sum_sq / nf - estimate * estimate).max(0.0) / nf).sqrt(),
    };
    if estimate > 1.0 {
        warnings.push(format!("weighted estimate {estimate} clipped to 1"));
        estimate = 1.0;
    }
    let ess = if wsq > 0.0 { (wsum * wsum / wsq).min(nf) } else { 0.0 };
    if ess < 0.01 * nf {
        warnings.push(format!("low effective sample size {ess:.1} of {n}"));
    }
    EstimatorResult {
        method,
        gamma,
        exceedance: mode,
        estimate,
        std_error,
        effective_sample_size: ess,
        samples: n,
        failed,
        evaluations: pool.samples.len(),
        proposal: pool.proposal.clone(),
        trace: Vec::new(),
        converged: None,
        warnings,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_estimate<E: ScenarioEvaluator + ?Sized>(
    evaluator: &E,
    nominal: &ScenarioDistribution,
    gamma: f64,
    n: usize,
    target: Target,
    mode: Exceedance,
    seed: StreamSeed,
) -> Result<EstimatorResult, RareEventError> {
    if n == 0 {
        return Err(RareEventError::Contract("need at least one sample".into()));
    }
    nominal.validate()?;
    let pool = draw_pool(evaluator, nominal, nominal, n, seed, STAGE_MONTE_CARLO);
    Ok(estimate_from_pool(&pool, gamma, target, mode, Method::MonteCarlo))
}

#[allow(clippy::too_many_arguments)]
pub fn importance_estimate<E: ScenarioEvaluator + ?Sized>(
    evaluator: &E,
    proposal: &ScenarioDistribution,
    nominal: &ScenarioDistribution,
    gamma: f64,
    n: usize,
    target: Target,
    mode: Exceedance,
    seed: StreamSeed,
    stage: u64,
) -> Result<EstimatorResult, RareEventError> {
    if n == 0 {
        return Err(RareEventError::Contract("need at least one sample".into()));
    }
    proposal.validate()?;
    nominal.validate()?;
    let pool = draw_pool(evaluator, proposal, nominal, n, seed, stage);
    Ok(estimate_from_pool(&pool, gamma, target, mode, Method::CrossEntropy))
}
