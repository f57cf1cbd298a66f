use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use super::RareEventError;

/// Parametric family of fault durations given the faulted branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DurationFamily {
    /// `τ ~ Exp(λ)`, density `λ e^{-λτ}`.
    Exponential,
    /// Finite support with `P(τ_j) ∝ e^{-λ τ_j}`; `λ` may be any real.
    Discrete { support: Vec<f64> },
    /// `τ = k Δ` with `k ~ Poisson(1 / (λ Δ))`, so the mean is `1/λ`.
    Lattice { quantum: f64 },
}

/// `(α, τ)` drawn from a [`ScenarioDistribution`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDraw {
    pub branch: Option<usize>,
    pub duration: f64,
}

/// `q(α, τ) = φ_α f(τ; λ_α)`, plus an optional point mass on "no fault".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDistribution {
    pub line_weights: Vec<f64>,
    #[serde(default)]
    pub no_fault_weight: f64,
    pub rates: Vec<f64>,
    pub family: DurationFamily,
}

const SUM_TOLERANCE: f64 = 1e-9;
// Bracket for the tilt parameter of the discrete family.
const DISCRETE_RATE_BOUND: f64 = 1e3;

impl ScenarioDistribution {
    /// Uniform branch choice with a common rate.
    pub fn uniform(branches: usize, rate: f64, family: DurationFamily) -> Self {
        Self {
            line_weights: vec![1.0 / branches as f64; branches],
            no_fault_weight: 0.0,
            rates: vec![rate; branches],
            family,
        }
    }

    pub fn n_branches(&self) -> usize {
        self.line_weights.len()
    }

    pub fn validate(&self) -> Result<(), RareEventError> {
        let bad = |m: String| Err(RareEventError::Distribution(m));
        if self.line_weights.is_empty() || self.line_weights.len() != self.rates.len() {
            return bad("need one weight and one rate per branch".into());
        }
        if self
            .line_weights
            .iter()
            .chain(std::iter::once(&self.no_fault_weight))
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return bad("weights must be finite and non-negative".into());
        }
        let total: f64 = self.line_weights.iter().sum::<f64>() + self.no_fault_weight;
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return bad(format!("weights sum to {total}, not 1"));
        }
        match &self.family {
            DurationFamily::Discrete { support } => {
                if support.is_empty() || support.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                    return bad("discrete support must be non-empty and non-negative".into());
                }
                if self.rates.iter().any(|r| !r.is_finite()) {
                    return bad("rates must be finite".into());
                }
            }
            DurationFamily::Lattice { quantum } if !(*quantum > 0.0) => {
                return bad("lattice quantum must be positive".into());
            }
            _ => {
                if self.rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                    return bad("rates must be positive".into());
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ScenarioDraw {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut branch = None;
        for (k, w) in self.line_weights.iter().enumerate() {
            acc += w;
            if u < acc {
                branch = Some(k);
                break;
            }
        }
        if branch.is_none() && self.no_fault_weight == 0.0 {
            // Rounding left u above the cumulative sum: take the last branch with mass.
            branch = self.line_weights.iter().rposition(|&w| w > 0.0);
        }
        let Some(b) = branch else {
            return ScenarioDraw { branch: None, duration: 0.0 };
        };
        let rate = self.rates[b];
        let duration = match &self.family {
            DurationFamily::Exponential => Exp::new(rate).expect("validated rate").sample(rng),
            DurationFamily::Discrete { support } => {
                let p = discrete_pmf(support, rate);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = support.len() - 1;
                for (j, pj) in p.iter().enumerate() {
                    acc += pj;
                    if u < acc {
                        pick = j;
                        break;
                    }
                }
                support[pick]
            }
            DurationFamily::Lattice { quantum } => {
                let mean = 1.0 / (rate * quantum);
                let k: f64 = Poisson::new(mean).expect("validated rate").sample(rng);
                k * quantum
            }
        };
        ScenarioDraw { branch: Some(b), duration }
    }

    /// `ln q(α, τ)`; `-∞` outside the support.
    pub fn log_density(&self, draw: &ScenarioDraw) -> f64 {
        let Some(b) = draw.branch else {
            return self.no_fault_weight.ln();
        };
        let Some(&phi) = self.line_weights.get(b) else {
            return f64::NEG_INFINITY;
        };
        let rate = self.rates[b];
        let tau = draw.duration;
        let log_f = match &self.family {
            DurationFamily::Exponential => {
                if tau < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    rate.ln() - rate * tau
                }
            }
            DurationFamily::Discrete { support } => {
                match support.iter().position(|&t| (t - tau).abs() <= 1e-12 * t.abs().max(1.0)) {
                    Some(j) => discrete_pmf(support, rate)[j].ln(),
                    None => f64::NEG_INFINITY,
                }
            }
            DurationFamily::Lattice { quantum } => {
                let k = (tau / quantum).round();
                if k < 0.0 || (k * quantum - tau).abs() > 1e-9 * quantum {
                    f64::NEG_INFINITY
                } else {
                    let mean = 1.0 / (rate * quantum);
                    k * mean.ln() - mean - ln_factorial(k as u64)
                }
            }
        };
        phi.ln() + log_f
    }

    pub fn density(&self, draw: &ScenarioDraw) -> f64 {
        self.log_density(draw).exp()
    }

    /// `p(draw) / self(draw)` for a draw taken from `self`.
    pub fn likelihood_ratio(&self, nominal: &ScenarioDistribution, draw: &ScenarioDraw) -> f64 {
        let (p, q) = (nominal.log_density(draw), self.log_density(draw));
        if p == f64::NEG_INFINITY {
            return 0.0;
        }
        assert!(q > f64::NEG_INFINITY, "draw outside proposal support: {draw:?}");
        (p - q).exp()
    }

    /// Weighted maximum-likelihood rate for one branch given `(τ, w)` pairs.
    pub(crate) fn fit_rate(&self, data: &[(f64, f64)], previous: f64) -> f64 {
        let wsum: f64 = data.iter().map(|d| d.1).sum();
        if data.is_empty() || !(wsum > 0.0) {
            return previous;
        }
        let mean = data.iter().map(|(t, w)| t * w).sum::<f64>() / wsum;
        match &self.family {
            DurationFamily::Exponential => {
                if mean > 0.0 {
                    1.0 / mean
                } else {
                    previous
                }
            }
            DurationFamily::Lattice { quantum } => 1.0 / mean.max(1e-3 * quantum),
            DurationFamily::Discrete { support } => discrete_rate_for_mean(support, mean),
        }
    }
}

fn discrete_pmf(support: &[f64], rate: f64) -> Vec<f64> {
    let logs: Vec<f64> = support.iter().map(|t| -rate * t).collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn discrete_mean(support: &[f64], rate: f64) -> f64 {
    discrete_pmf(support, rate).iter().zip(support).map(|(p, t)| p * t).sum()
}

// The mean under e^{-λτ} tilting decreases in λ; solve mean(λ) = target by bisection.
fn discrete_rate_for_mean(support: &[f64], target: f64) -> f64 {
    let (mut lo, mut hi) = (-DISCRETE_RATE_BOUND, DISCRETE_RATE_BOUND);
    if target >= discrete_mean(support, lo) {
        return lo;
    }
    if target <= discrete_mean(support, hi) {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if discrete_mean(support, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn ln_factorial(k: u64) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}
