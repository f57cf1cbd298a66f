use serde::{Deserialize, Serialize};

use super::{
    draw_pool, estimate_from_pool, exceeds, EstimatorResult, Exceedance, Method, RareEventError,
    ScenarioDistribution, ScenarioDraw, ScenarioEvaluator, StreamSeed, Target, STAGE_CE, STAGE_FINAL,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CeParams {
    /// Elite fraction.
    pub rho: f64,
    /// Additive smoothing on branch weights; `None` means `1e-3 / |E|`.
    pub smoothing: Option<f64>,
    /// Step-size mixing `ν ← η ν_new + (1 - η) ν_old`.
    pub mixing: f64,
    /// Parameter change below which [`StopRule::Stable`] stops.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub samples_per_iteration: usize,
    pub exceedance: Exceedance,
    pub stop_rule: StopRule,
    /// Elites a branch needs before its duration rate is refitted.
    pub min_rate_elites: usize,
}

/// When [`ce_optimize`] stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// After the first update whose elite set is the target event.
    #[default]
    TargetReached,
    /// Once the target is reached and `‖ν_t - ν_{t-1}‖∞ < tolerance`.
    Stable,
}

impl Default for CeParams {
    fn default() -> Self {
        Self {
            rho: 0.1,
            smoothing: None,
            mixing: 0.7,
            tolerance: 1e-3,
            max_iterations: 20,
            samples_per_iteration: 1000,
            exceedance: Exceedance::AtLeast,
            stop_rule: StopRule::TargetReached,
            min_rate_elites: 5,
        }
    }
}

impl CeParams {
    pub fn validate(&self) -> Result<(), RareEventError> {
        let ok = self.rho > 0.0
            && self.rho <= 1.0
            && self.mixing > 0.0
            && self.mixing <= 1.0
            && self.tolerance > 0.0
            && self.max_iterations > 0
            && self.samples_per_iteration > 0
            && self.smoothing.is_none_or(|e| e > 0.0 && e.is_finite());
        if ok {
            Ok(())
        } else {
            Err(RareEventError::Contract(format!("invalid CE parameters {self:?}")))
        }
    }

    pub fn smoothing_for(&self, branches: usize) -> f64 {
        self.smoothing.unwrap_or(1e-3 / branches as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeUpdate {
    pub proposal: ScenarioDistribution,
    /// Level `γ_t` actually used for the elite set.
    pub level: f64,
    pub elite_count: usize,
    /// True when the elite set is the target event itself.
    pub reached_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeIteration {
    pub iteration: usize,
    pub level: f64,
    pub elite_count: usize,
    pub samples: usize,
    pub failed: usize,
    pub change: f64,
    pub reached_target: bool,
    pub proposal: ScenarioDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeOutcome {
    pub proposal: ScenarioDistribution,
    pub trace: Vec<CeIteration>,
    pub converged: bool,
    pub evaluations: usize,
}

/// One cross-entropy step.
///
/// The level is the `(1 - ρ)` empirical quantile of `scores`, capped at
/// `gamma`. When ties at the quantile swell the elite set past `ρN`, only
/// samples strictly above it are kept. Elites (at least `max(10, ρN/2)`) are weighted by the
/// likelihood ratios in `weights` and fitted by closed-form weighted maximum
/// likelihood; branch weights are smoothed by `smoothing`, a branch's rate is
/// only refitted once it has `min_rate_elites` elites, and the result is
/// mixed with `previous`.
#[allow(clippy::too_many_arguments)]
pub fn ce_update(
    draws: &[ScenarioDraw],
    scores: &[f64],
    weights: &[f64],
    rho: f64,
    gamma: f64,
    mode: Exceedance,
    previous: &ScenarioDistribution,
    smoothing: f64,
    mixing: f64,
    min_rate_elites: usize,
) -> Result<CeUpdate, RareEventError> {
    let n = scores.len();
    if n == 0 || draws.len() != n || weights.len() != n {
        return Err(RareEventError::Contract("need matching non-empty samples, scores and weights".into()));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(RareEventError::Contract(format!("elite fraction {rho} outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let q_index = (((1.0 - rho) * n as f64).ceil() as usize).saturating_sub(1).min(n - 1);
    let quantile = scores[order[q_index]];
    let mut reached_target = quantile >= gamma;
    let mut level = quantile.min(gamma);
    let mut elite: Vec<usize> = if reached_target {
        (0..n).filter(|&i| exceeds(scores[i], gamma, mode)).collect()
    } else {
        let at_least: Vec<usize> = (0..n).filter(|&i| scores[i] >= level).collect();
        let above: Vec<usize> = (0..n).filter(|&i| scores[i] > level).collect();
        // Ties at the quantile (typically a mass of zero scores) would make
        // almost every sample elite and stall the iteration.
        if at_least.len() as f64 > (rho * n as f64).ceil() && !above.is_empty() {
            above
        } else {
            at_least
        }
    };
    let floor = (10usize.max((rho * n as f64 / 2.0).ceil() as usize)).min(n);
    if elite.len() < floor {
        elite = order[n - floor..].to_vec();
        elite.sort_unstable();
        level = elite.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
        reached_target = false;
    }
    let wsum: f64 = elite.iter().map(|&i| weights[i]).sum();
    if elite.is_empty() || !(wsum > 0.0) {
        return Err(RareEventError::DegenerateElite { level });
    }

    let m = previous.n_branches();
    let with_none = previous.no_fault_weight > 0.0;
    let categories = m + usize::from(with_none);
    let mut mass = vec![0.0; m];
    let mut none_mass = 0.0;
    let mut per_branch: Vec<Vec<(f64, f64)>> = vec![Vec::new(); m];
    for &i in &elite {
        let w = weights[i] / wsum;
        match draws[i].branch {
            Some(b) => {
                mass[b] += w;
                per_branch[b].push((draws[i].duration, w));
            }
            None => none_mass += w,
        }
    }
    let norm = 1.0 + smoothing * categories as f64;
    let mut next = previous.clone();
    for b in 0..m {
        let phi_new = (mass[b] + smoothing) / norm;
        let rate_new = if per_branch[b].len() >= min_rate_elites.max(1) {
            previous.fit_rate(&per_branch[b], previous.rates[b])
        } else {
            previous.rates[b]
        };
        next.line_weights[b] = mixing * phi_new + (1.0 - mixing) * previous.line_weights[b];
        next.rates[b] = mixing * rate_new + (1.0 - mixing) * previous.rates[b];
    }
    if with_none {
        let phi_new = (none_mass + smoothing) / norm;
        next.no_fault_weight = mixing * phi_new + (1.0 - mixing) * previous.no_fault_weight;
    }
    let total: f64 = next.line_weights.iter().sum::<f64>() + next.no_fault_weight;
    for w in &mut next.line_weights {
        *w /= total;
    }
    next.no_fault_weight /= total;
    Ok(CeUpdate { proposal: next, level, elite_count: elite.len(), reached_target })
}

/// `‖a - b‖∞` over branch weights, no-fault weight and rates.
pub(crate) fn change(a: &ScenarioDistribution, b: &ScenarioDistribution) -> f64 {
    let phi = a.line_weights.iter().zip(&b.line_weights).map(|(x, y)| (x - y).abs());
    let rate = a.rates.iter().zip(&b.rates).map(|(x, y)| (x - y).abs());
    phi.chain(rate)
        .chain(std::iter::once((a.no_fault_weight - b.no_fault_weight).abs()))
        .fold(0.0, f64::max)
}

/// Iterates sample → score → [`ce_update`] from the nominal law until the
/// stop rule holds or the iteration budget runs out (flagged unconverged).
pub fn ce_optimize<E: ScenarioEvaluator + ?Sized>(
    evaluator: &E,
    nominal: &ScenarioDistribution,
    gamma: f64,
    target: Target,
    params: &CeParams,
    seed: StreamSeed,
) -> Result<CeOutcome, RareEventError> {
    params.validate()?;
    nominal.validate()?;
    let smoothing = params.smoothing_for(nominal.n_branches());
    let mut nu = nominal.clone();
    let mut trace = Vec::new();
    let mut evaluations = 0;
    let mut converged = false;
    for t in 1..=params.max_iterations {
        let n = params.samples_per_iteration;
        let pool = draw_pool(evaluator, &nu, nominal, n, seed, STAGE_CE + t as u64);
        evaluations += n;
        let (mut draws, mut scores, mut weights) = (Vec::new(), Vec::new(), Vec::new());
        for (s, score) in pool.scored() {
            draws.push(s.draw);
            scores.push(target.value(score));
            weights.push(s.weight);
        }
        let upd = ce_update(
            &draws,
            &scores,
            &weights,
            params.rho,
            gamma,
            params.exceedance,
            &nu,
            smoothing,
            params.mixing,
            params.min_rate_elites,
        )?;
        let delta = change(&upd.proposal, &nu);
        log::debug!(
            "CE iteration {t}: level {:.4} elites {} change {delta:.3e}",
            upd.level,
            upd.elite_count
        );
        trace.push(CeIteration {
            iteration: t,
            level: upd.level,
            elite_count: upd.elite_count,
            samples: n,
            failed: pool.failed(),
            change: delta,
            reached_target: upd.reached_target,
            proposal: upd.proposal.clone(),
        });
        nu = upd.proposal;
        let stop = match params.stop_rule {
            StopRule::TargetReached => upd.reached_target,
            StopRule::Stable => upd.reached_target && delta < params.tolerance,
        };
        if stop {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("CE did not converge within {} iterations", params.max_iterations);
    }
    Ok(CeOutcome { proposal: nu, trace, converged, evaluations })
}

/// CE optimisation followed by a final importance-sampling run of
/// `final_samples` draws from the optimised proposal.
#[allow(clippy::too_many_arguments)]
pub fn cross_entropy_estimate<E: ScenarioEvaluator + ?Sized>(
    evaluator: &E,
    nominal: &ScenarioDistribution,
    gamma: f64,
    target: Target,
    params: &CeParams,
    final_samples: usize,
    seed: StreamSeed,
) -> Result<EstimatorResult, RareEventError> {
    if final_samples == 0 {
        return Err(RareEventError::Contract("need at least one final sample".into()));
    }
    let outcome = ce_optimize(evaluator, nominal, gamma, target, params, seed)?;
    let pool = draw_pool(evaluator, &outcome.proposal, nominal, final_samples, seed, STAGE_FINAL);
    let mut result = estimate_from_pool(&pool, gamma, target, params.exceedance, Method::CrossEntropy);
    result.evaluations += outcome.evaluations;
    result.converged = Some(outcome.converged);
    if !outcome.converged {
        result.warnings.push("cross-entropy iterations did not converge".into());
    }
    result.trace = outcome.trace;
    Ok(result)
}
