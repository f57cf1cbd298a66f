//! End-to-end screening: stratified N-1 sweep, cross-entropy proposal,
//! final importance-sampling pool, zones, rankings and curves.

use std::time::Instant;

use dynscreen_core::dynamics::{DynamicsEngine, DynamicsError};
use dynscreen_core::overload::risk_classify;
use dynscreen_core::rare_event::{
    ce_optimize, draw_pool, estimate_from_pool, EngineEvaluator, Exceedance, Method, RareEventError,
    SamplePool, ScenarioDistribution, StreamSeed, Target, STAGE_FINAL, STAGE_SWEEP,
};
use dynscreen_core::Grid;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, ScreeningConfig};
use crate::report::*;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    RareEvent(#[from] RareEventError),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

/// Runs `f` on a pool with the configured number of workers.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, RunError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| RunError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

pub fn nominal_distribution(config: &ScreeningConfig, branches: usize) -> ScenarioDistribution {
    ScenarioDistribution::uniform(branches, config.fault_rate, config.duration_family.clone())
}

/// Per-faulted-branch outcome of the stratified sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub faulted: Vec<usize>,
    /// `[faulted][monitored]` fraction of draws with `S ≥ T*`.
    pub probabilities: Vec<Vec<f64>>,
    /// Any positive overload per monitored branch.
    pub ever_overloaded: Vec<bool>,
    pub failed: usize,
    pub total: usize,
    pub reasons: Vec<String>,
}

/// Draws `n` durations from the nominal law conditioned on each faulted
/// branch and scores them; branch `α` uses stream stage `SWEEP + α`.
pub fn stratified_sweep(
    engine: &DynamicsEngine,
    noise_scale: f64,
    nominal: &ScenarioDistribution,
    faulted: &[usize],
    n: usize,
    threshold: f64,
    seed: StreamSeed,
) -> SweepResult {
    let ev = EngineEvaluator { engine, noise_scale };
    let m = engine.monitored().len();
    let mut out = SweepResult {
        faulted: faulted.to_vec(),
        probabilities: Vec::with_capacity(faulted.len()),
        ever_overloaded: vec![false; m],
        failed: 0,
        total: 0,
        reasons: Vec::new(),
    };
    for &a in faulted {
        let mut cond = nominal.clone();
        cond.line_weights.iter_mut().for_each(|w| *w = 0.0);
        cond.no_fault_weight = 0.0;
        cond.line_weights[a] = 1.0;
        let pool = draw_pool(&ev, &cond, &cond, n, seed, STAGE_SWEEP + a as u64);
        let mut hits = vec![0usize; m];
        let mut scored = 0usize;
        for (_, score) in pool.scored() {
            scored += 1;
            for (k, &s) in score.overload_seconds.iter().enumerate() {
                if s >= threshold {
                    hits[k] += 1;
                }
                if s > 0.0 {
                    out.ever_overloaded[k] = true;
                }
            }
        }
        collect_failures(&pool, &mut out.failed, &mut out.reasons);
        out.total += n;
        let denom = scored.max(1) as f64;
        out.probabilities.push(hits.iter().map(|&h| h as f64 / denom).collect());
    }
    out
}

fn collect_failures(pool: &SamplePool, failed: &mut usize, reasons: &mut Vec<String>) {
    for s in &pool.samples {
        if let Some(r) = &s.failure {
            *failed += 1;
            if reasons.len() < 10 && !reasons.contains(r) {
                reasons.push(r.clone());
            }
        }
    }
}

pub fn run_screening(config: &ScreeningConfig, trace: bool) -> Result<RiskReport, RunError> {
    config.validate()?;
    let grid = config.load_grid()?;
    run_screening_on(grid, config, trace)
}

/// Screening on an already loaded grid (the config's grid path is only hashed).
pub fn run_screening_on(grid: Grid, config: &ScreeningConfig, trace: bool) -> Result<RiskReport, RunError> {
    config.validate()?;
    let faulted = config.faulted_branches(grid.n_branches())?;
    let engine = DynamicsEngine::new(grid, config.engine_settings())?;
    let workers = config.workers;
    with_workers(workers, || screen(&engine, config, &faulted, trace))?
}

fn screen(
    engine: &DynamicsEngine,
    config: &ScreeningConfig,
    faulted: &[usize],
    trace: bool,
) -> Result<RiskReport, RunError> {
    let start = Instant::now();
    let grid = engine.grid();
    let seed = StreamSeed(config.seed);
    let t_star = config.policy.max_overload_seconds;
    let nominal = nominal_distribution(config, grid.n_branches());
    let ev = EngineEvaluator { engine, noise_scale: config.noise_scale };
    let monitored = engine.monitored().to_vec();
    let mut runtime = Runtime { workers: rayon::current_num_threads(), ..Default::default() };

    let t = Instant::now();
    let prepared: Vec<usize> = (0..grid.n_branches()).collect();
    prepared.par_iter().for_each(|&b| {
        if let Err(e) = engine.prepare(b) {
            log::warn!("cannot prepare fault on branch {b}: {e}");
        }
    });
    runtime.prepare_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let sweep = stratified_sweep(engine, config.noise_scale, &nominal, faulted, config.samples_per_branch, t_star, seed);
    runtime.sweep_seconds = t.elapsed().as_secs_f64();
    log::info!("sweep of {} faults took {:.2} s", faulted.len(), runtime.sweep_seconds);

    let t = Instant::now();
    let outcome = ce_optimize(&ev, &nominal, t_star, Target::Global, &config.ce, seed)?;
    runtime.cross_entropy_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let pool = draw_pool(&ev, &outcome.proposal, &nominal, config.samples, seed, STAGE_FINAL);
    runtime.final_seconds = t.elapsed().as_secs_f64();

    let mut failed = sweep.failed;
    let mut reasons = sweep.reasons.clone();
    collect_failures(&pool, &mut failed, &mut reasons);
    let ce_failed: usize = outcome.trace.iter().map(|it| it.failed).sum();
    failed += ce_failed;
    let total = sweep.total + outcome.evaluations + config.samples;

    let exceedance = config
        .gammas
        .iter()
        .map(|&g| {
            let r = estimate_from_pool(&pool, g, Target::Global, config.exceedance, Method::CrossEntropy);
            ExceedanceRow {
                gamma: g,
                estimate: r.estimate,
                std_error: r.std_error,
                effective_sample_size: r.effective_sample_size,
            }
        })
        .collect();

    let marginals: Vec<(f64, f64)> = (0..monitored.len())
        .map(|m| {
            let r = estimate_from_pool(&pool, t_star, Target::Branch(m), Exceedance::AtLeast, Method::CrossEntropy);
            (r.estimate, r.std_error)
        })
        .collect();

    let zones = monitored
        .iter()
        .enumerate()
        .map(|(m, &b)| {
            let (worst_probability, worst_faulted_branch) = sweep
                .probabilities
                .iter()
                .zip(&sweep.faulted)
                .fold((0.0, None), |acc, (row, &a)| if row[m] > acc.0 { (row[m], Some(a)) } else { acc });
            BranchRisk {
                branch: b,
                worst_probability,
                worst_faulted_branch,
                zone: risk_classify(worst_probability, &config.policy).expect("probability in [0, 1]"),
                probability: marginals[m].0,
                std_error: marginals[m].1,
                ever_overloaded: sweep.ever_overloaded[m],
            }
        })
        .collect();

    let report = RiskReport {
        schema_version: REPORT_SCHEMA_VERSION,
        grid: GridSummary {
            buses: grid.n_buses(),
            branches: grid.n_branches(),
            monitored: monitored
                .iter()
                .map(|&b| {
                    let br = &grid.branches()[b];
                    BranchInfo { index: b, from: br.from, to: br.to, transformer: br.transformer, limit: br.limit }
                })
                .collect(),
        },
        model: ModelSummary {
            horizon: config.horizon,
            dt: config.dt,
            fault_rate: config.fault_rate,
            noise_scale: config.noise_scale,
            exceedance: config.exceedance,
        },
        policy: config.policy.clone(),
        conditional: ConditionalMatrix {
            samples_per_branch: config.samples_per_branch,
            faulted: sweep.faulted.clone(),
            probabilities: sweep.probabilities.clone(),
        },
        zones,
        exceedance,
        faulted_ranking: rank_faulted_lines(&pool, grid.n_branches(), t_star),
        vulnerability_ranking: rank_vulnerable_elements(
            &pool,
            &monitored,
            grid,
            &marginals.iter().map(|m| m.0).collect::<Vec<_>>(),
            config.top_scenarios,
        ),
        curves: probability_curves(&pool, &monitored, t_star, config.curve_bin, config.horizon),
        cross_entropy: CeSummary {
            converged: outcome.converged,
            iterations: outcome.trace.len(),
            evaluations: outcome.evaluations,
            final_level: outcome.trace.last().map(|it| it.level).unwrap_or(0.0),
            trace: if trace { outcome.trace.clone() } else { Vec::new() },
        },
        failures: FailureSummary {
            failed,
            total,
            degraded: failed as f64 > 0.01 * total as f64,
            reasons,
        },
        metadata: Metadata {
            seed: config.seed,
            config_hash: config.hash(),
            runtime: Runtime { total_seconds: start.elapsed().as_secs_f64(), ..runtime },
        },
    };
    if report.failures.degraded {
        log::warn!("{} of {} scenario evaluations failed; report is degraded", failed, total);
    }
    Ok(report)
}

/// Faulted branches by weighted probability of driving any monitored
/// branch to `S ≥ T*`, then by weighted overload seconds, then by index.
pub fn rank_faulted_lines(pool: &SamplePool, branches: usize, threshold: f64) -> Vec<FaultedLineRank> {
    let n = pool.samples.len().max(1) as f64;
    let mut rows: Vec<FaultedLineRank> =
        (0..branches).map(|b| FaultedLineRank { branch: b, frequency: 0.0, overload_seconds: 0.0 }).collect();
    for (s, score) in pool.scored() {
        let Some(a) = s.draw.branch else { continue };
        if score.overload_seconds.iter().any(|&x| x >= threshold) {
            rows[a].frequency += s.weight / n;
        }
        rows[a].overload_seconds += s.weight * score.global / n;
    }
    rows.sort_by(|x, y| {
        y.frequency
            .total_cmp(&x.frequency)
            .then(y.overload_seconds.total_cmp(&x.overload_seconds))
            .then(x.branch.cmp(&y.branch))
    });
    rows
}

/// Monitored branches by how many of the `k` highest-scoring scenarios
/// overload them, then by `probabilities` (monitored order), then by index.
pub fn rank_vulnerable_elements(
    pool: &SamplePool,
    monitored: &[usize],
    grid: &Grid,
    probabilities: &[f64],
    k: usize,
) -> Vec<VulnerableElement> {
    let mut scored: Vec<(usize, f64)> =
        pool.samples.iter().enumerate().filter_map(|(i, s)| s.score.as_ref().map(|sc| (i, sc.global))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut recurrence = vec![0usize; monitored.len()];
    for &(i, global) in scored.iter().take(k) {
        if global <= 0.0 {
            break;
        }
        let score = pool.samples[i].score.as_ref().expect("filtered to scored samples");
        for (m, &s) in score.overload_seconds.iter().enumerate() {
            if s > 0.0 {
                recurrence[m] += 1;
            }
        }
    }
    let mut rows: Vec<VulnerableElement> = monitored
        .iter()
        .enumerate()
        .map(|(m, &b)| VulnerableElement {
            branch: b,
            transformer: grid.branches()[b].transformer,
            recurrence: recurrence[m],
            probability: probabilities[m],
        })
        .collect();
    rows.sort_by(|x, y| {
        y.recurrence
            .cmp(&x.recurrence)
            .then(y.probability.total_cmp(&x.probability))
            .then(x.branch.cmp(&y.branch))
    });
    rows
}

/// Importance-weighted `P[S ≥ T* | τ ∈ bin]` and mean overload per bin.
/// Durations beyond the horizon fall in the last bin.
pub fn probability_curves(
    pool: &SamplePool,
    monitored: &[usize],
    threshold: f64,
    bin: f64,
    horizon: f64,
) -> Vec<BranchCurve> {
    let bins = ((horizon / bin).ceil() as usize).max(1);
    let mut wsum = vec![0.0; bins];
    let mut hit = vec![vec![0.0; bins]; monitored.len()];
    let mut over = vec![vec![0.0; bins]; monitored.len()];
    for (s, score) in pool.scored() {
        if s.draw.branch.is_none() {
            continue;
        }
        let j = ((s.draw.duration / bin).floor() as usize).min(bins - 1);
        wsum[j] += s.weight;
        for (m, &x) in score.overload_seconds.iter().enumerate() {
            if x >= threshold {
                hit[m][j] += s.weight;
            }
            over[m][j] += s.weight * x;
        }
    }
    let tau: Vec<f64> = (0..bins).map(|j| j as f64 * bin).collect();
    let ratio = |num: &[f64]| -> Vec<Option<f64>> {
        num.iter().zip(&wsum).map(|(a, &w)| (w > 0.0).then(|| (a / w).min(1.0))).collect()
    };
    let ratio_raw = |num: &[f64]| -> Vec<Option<f64>> {
        num.iter().zip(&wsum).map(|(a, &w)| (w > 0.0).then(|| a / w)).collect()
    };
    monitored
        .iter()
        .enumerate()
        .map(|(m, &b)| BranchCurve {
            branch: b,
            tau: tau.clone(),
            probability: ratio(&hit[m]),
            overload_seconds: ratio_raw(&over[m]),
        })
        .collect()
}
