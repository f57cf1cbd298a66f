use rand::Rng;
use rand_distr::StandardNormal;

/// Brownian increments `ΔW_k` on a uniform grid of spacing `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub dt: f64,
    pub increments: Vec<f64>,
}

impl NoisePath {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, dt: f64, steps: usize) -> Self {
        let sd = dt.sqrt();
        let increments = (0..steps).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
        Self { dt, increments }
    }

    pub fn zeros(dt: f64, steps: usize) -> Self {
        Self { dt, increments: vec![0.0; steps] }
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    /// Sums consecutive groups of `factor` increments, giving the same
    /// Brownian path on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Self {
        assert!(factor > 0, "coarsening factor must be positive");
        Self {
            dt: self.dt * factor as f64,
            increments: self.increments.chunks_exact(factor).map(|c| c.iter().sum()).collect(),
        }
    }

    /// `W(t_k)` for `k = 0..=len`.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.len() + 1);
        let mut acc = 0.0;
        w.push(acc);
        for d in &self.increments {
            acc += d;
            w.push(acc);
        }
        w
    }
}
