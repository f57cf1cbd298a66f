mod common;

use common::*;
use dynscreen_core::dynamics::ScenarioScore;
use dynscreen_core::rare_event::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn probability(table: &[(ScenarioDraw, f64, Vec<f64>)], gamma: f64, mode: Exceedance) -> f64 {
    table
        .iter()
        .filter(|(_, _, s)| exceeds(s.iter().sum(), gamma, mode))
        .map(|(_, p, _)| p)
        .sum()
}

#[test]
fn enumeration_table_is_a_distribution_with_overloads() {
    let table = toy_enumeration();
    let total: f64 = table.iter().map(|t| t.1).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let p0 = probability(&table, 0.0, Exceedance::Above);
    assert!(p0 > 0.05 && p0 < 0.95, "toy instance should be non-trivial: {p0}");
}

#[test]
fn engine_scores_match_trajectory_scores_on_toy() {
    let engine = toy_engine();
    let ev = EngineEvaluator { engine: &engine, noise_scale: 0.0 };
    let mut rng = StreamSeed(0).stream(0, 0);
    for (draw, _, s) in toy_enumeration() {
        let score = ev.evaluate(&draw, &mut rng).unwrap();
        assert_eq!(score.overload_seconds, s, "{draw:?}");
    }
}

#[test]
fn trivial_thresholds() {
    let engine = toy_engine();
    let ev = EngineEvaluator { engine: &engine, noise_scale: 0.0 };
    let nominal = toy_nominal();
    let r = monte_carlo_estimate(&ev, &nominal, -1.0, 200, Target::Global, Exceedance::AtLeast, StreamSeed(3)).unwrap();
    assert_eq!((r.estimate, r.std_error), (1.0, 0.0));
    let t_max = 3.0 * TOY_HORIZON;
    let r = monte_carlo_estimate(&ev, &nominal, t_max + 1.0, 200, Target::Global, Exceedance::AtLeast, StreamSeed(3))
        .unwrap();
    assert_eq!((r.estimate, r.std_error), (0.0, 0.0));
}

#[test]
fn monte_carlo_and_cross_entropy_match_enumeration() {
    let table = toy_enumeration();
    let t_max = table.iter().map(|t| t.2.iter().sum::<f64>()).fold(0.0, f64::max);
    let engine = toy_engine();
    let ev = EngineEvaluator { engine: &engine, noise_scale: 0.0 };
    let nominal = toy_nominal();
    for (gamma, mode) in [(0.0, Exceedance::Above), (0.5 * t_max, Exceedance::AtLeast)] {
        let exact = probability(&table, gamma, mode);
        let mc = monte_carlo_estimate(&ev, &nominal, gamma, 4000, Target::Global, mode, StreamSeed(7)).unwrap();
        assert!((mc.estimate - exact).abs() <= 3.0 * mc.std_error, "MC γ={gamma}: {} vs {exact} ± {}", mc.estimate, mc.std_error);
        let params = CeParams { samples_per_iteration: 500, exceedance: mode, ..Default::default() };
        let ce = cross_entropy_estimate(&ev, &nominal, gamma, Target::Global, &params, 2000, StreamSeed(7)).unwrap();
        assert!((ce.estimate - exact).abs() <= 3.0 * ce.std_error, "CE γ={gamma}: {} vs {exact} ± {}", ce.estimate, ce.std_error);
    }
}

#[test]
fn likelihood_ratio_identity_by_enumeration() {
    let table = toy_enumeration();
    let nominal = toy_nominal();
    let mut proposal = nominal.clone();
    proposal.line_weights = vec![0.7, 0.1, 0.2];
    proposal.rates = vec![-0.8, 1.5, 0.05];
    for gamma in [0.0, 1.0, 3.0] {
        let exact = probability(&table, gamma, Exceedance::Above);
        let weighted: f64 = table
            .iter()
            .filter(|(_, _, s)| s.iter().sum::<f64>() > gamma)
            .map(|(d, _, _)| proposal.density(d) * proposal.likelihood_ratio(&nominal, d))
            .sum();
        assert!((weighted - exact).abs() < 1e-12);
    }
}

#[test]
fn estimates_are_monotone_in_gamma_on_a_shared_pool() {
    let engine = toy_engine();
    let ev = EngineEvaluator { engine: &engine, noise_scale: 0.2 };
    let nominal = toy_nominal();
    let pool = draw_pool(&ev, &nominal, &nominal, 500, StreamSeed(5), STAGE_MONTE_CARLO);
    let mut last = 1.0;
    for k in 0..40 {
        let q = estimate_from_pool(&pool, k as f64 * 0.25, Target::Global, Exceedance::AtLeast, Method::MonteCarlo).estimate;
        assert!(q <= last);
        last = q;
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let engine = toy_engine();
    let ev = EngineEvaluator { engine: &engine, noise_scale: 0.1 };
    let nominal = toy_nominal();
    let params = CeParams { samples_per_iteration: 300, max_iterations: 4, ..Default::default() };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            cross_entropy_estimate(&ev, &nominal, 2.0, Target::Global, &params, 500, StreamSeed(11)).unwrap()
        })
    };
    let a = serde_json::to_string(&run(1)).unwrap();
    assert_eq!(a, serde_json::to_string(&run(3)).unwrap());
    assert_eq!(a, serde_json::to_string(&run(8)).unwrap());
}

/// Overloads only when branch `hot` is faulted for longer than `cutoff`.
struct Separable {
    branches: usize,
    hot: usize,
    cutoff: f64,
}

impl ScenarioEvaluator for Separable {
    fn monitored_count(&self) -> usize {
        self.branches
    }

    fn evaluate(&self, draw: &ScenarioDraw, _rng: &mut ChaCha8Rng) -> Result<ScenarioScore, String> {
        let mut s = vec![0.0; self.branches];
        if draw.branch == Some(self.hot) {
            s[self.hot] = (draw.duration - self.cutoff).max(0.0);
        }
        Ok(ScenarioScore { global: s.iter().sum(), overload_seconds: s, steps_simulated: 0 })
    }
}

#[test]
fn cross_entropy_concentrates_on_the_only_dangerous_branch() {
    let ev = Separable { branches: 20, hot: 13, cutoff: 15.0 };
    let nominal = ScenarioDistribution::uniform(20, 0.1, DurationFamily::Exponential);
    let params = CeParams { samples_per_iteration: 2000, ..Default::default() };
    let out = ce_optimize(&ev, &nominal, 5.0, Target::Global, &params, StreamSeed(2)).unwrap();
    assert!(out.converged);
    assert!(out.proposal.line_weights[13] >= 0.9, "{:?}", out.proposal.line_weights);
    // Exact: P = φ_hot · e^{-λ (cutoff + γ)}.
    let exact = (-0.1f64 * 20.0).exp() / 20.0;
    let est = cross_entropy_estimate(&ev, &nominal, 5.0, Target::Global, &params, 2000, StreamSeed(2)).unwrap();
    assert!((est.estimate - exact).abs() <= 3.0 * est.std_error, "{} vs {exact}", est.estimate);
}

#[test]
fn gamma_zero_converges_in_one_iteration_to_the_nominal_fit() {
    let ev = Separable { branches: 4, hot: 0, cutoff: 1e9 };
    let nominal = ScenarioDistribution::uniform(4, 0.1, DurationFamily::Exponential);
    let params = CeParams { samples_per_iteration: 200_000, mixing: 1.0, tolerance: 0.02, ..Default::default() };
    let out = ce_optimize(&ev, &nominal, 0.0, Target::Global, &params, StreamSeed(4)).unwrap();
    assert_eq!(out.trace.len(), 1);
    assert!(out.converged);
    for (w, r) in out.proposal.line_weights.iter().zip(&out.proposal.rates) {
        assert!((w - 0.25).abs() < 0.01 && (r - 0.1).abs() < 0.01, "{w} {r}");
    }
}

#[test]
fn weighted_rate_fit_is_consistent() {
    let mut rng = StreamSeed(9).stream(0, 0);
    let n = 10_000;
    let draws: Vec<ScenarioDraw> = (0..n)
        .map(|_| ScenarioDraw { branch: Some(1), duration: -rng.random::<f64>().ln() / 2.0 })
        .collect();
    let scores = vec![1.0; n];
    let weights = vec![1.0; n];
    let prev = ScenarioDistribution::uniform(3, 0.1, DurationFamily::Exponential);
    let upd = ce_update(&draws, &scores, &weights, 1.0, 1.0, Exceedance::AtLeast, &prev, 1e-12, 1.0, 1).unwrap();
    // The MLE has standard error λ / √n.
    assert!((upd.proposal.rates[1] - 2.0).abs() < 3.0 * 2.0 / (n as f64).sqrt());
    assert!(upd.proposal.line_weights[1] > 0.999);
}

#[test]
fn elite_fraction_one_keeps_every_sample() {
    let draws: Vec<ScenarioDraw> = (0..30)
        .map(|k| ScenarioDraw { branch: Some(k % 3), duration: 1.0 + k as f64 })
        .collect();
    let scores: Vec<f64> = (0..30).map(|k| (k * 7 % 11) as f64).collect();
    let weights = vec![1.0; 30];
    let prev = ScenarioDistribution::uniform(3, 0.1, DurationFamily::Exponential);
    let upd = ce_update(&draws, &scores, &weights, 1.0, 100.0, Exceedance::AtLeast, &prev, 1e-9, 1.0, 1).unwrap();
    assert_eq!(upd.elite_count, 30);
    assert_eq!(upd.level, 0.0);
    for b in 0..3 {
        let taus: Vec<f64> = draws.iter().filter(|d| d.branch == Some(b)).map(|d| d.duration).collect();
        let mle = taus.len() as f64 / taus.iter().sum::<f64>();
        assert!((upd.proposal.rates[b] - mle).abs() < 1e-12);
    }
}
