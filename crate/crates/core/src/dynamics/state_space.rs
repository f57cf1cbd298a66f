use nalgebra::{DMatrix, DVector};

use super::DynamicsError;
use crate::grid::{build_laplacian, equilibrium_angles, fault_scale, nominal_scale, Grid};
use crate::FAULT_SUSCEPTANCE_FACTOR;

/// Drift, fault perturbation, forcing and noise coupling for one scenario.
///
/// Deterministic part: `ẋ = A x + P` with
/// `A = [[-M⁻¹D, -M⁻¹L], [I, 0]]` and `P = (M⁻¹p, 0)`.
/// While the fault is on the drift is `A + δA`, where `δA` swaps the
/// nominal Laplacian for the faulted one. The fault-on noise enters as
/// `G x dW` with `G = [[0, σ M⁻¹ e eᵀ], [0, 0]]`, `e = e_i - e_j`.
#[derive(Debug, Clone)]
pub struct StateSpace {
    n: usize,
    pub nominal: DMatrix<f64>,
    pub fault_delta: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    pub forcing: DVector<f64>,
    pub faulted_branch: Option<usize>,
    pub sigma: f64,
    nominal_equilibrium: DVector<f64>,
    fault_equilibrium: DVector<f64>,
    endpoints: Option<(usize, usize)>,
    inv_inertia: Vec<f64>,
}

pub fn assemble_state_space(
    grid: &Grid,
    faulted_branch: Option<usize>,
    sigma: f64,
) -> Result<StateSpace, DynamicsError> {
    if let Some(b) = faulted_branch {
        if b >= grid.n_branches() {
            return Err(DynamicsError::InvalidBranch(b));
        }
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(DynamicsError::Contract(format!("noise strength {sigma} must be non-negative")));
    }
    let n = grid.n_buses();
    let inv_inertia: Vec<f64> = grid.buses().iter().map(|b| 1.0 / b.inertia).collect();
    let nominal_scale = nominal_scale(grid);
    let lap = build_laplacian(grid, &nominal_scale).matrix;
    let nominal = drift(grid, &lap, &inv_inertia);

    let mut forcing = DVector::zeros(2 * n);
    for (k, bus) in grid.buses().iter().enumerate() {
        forcing[k] = bus.injection * inv_inertia[k];
    }
    let theta0 = equilibrium_angles(grid, &nominal_scale)?;
    let nominal_equilibrium = stack_angles(&theta0);

    let mut fault_delta = DMatrix::zeros(2 * n, 2 * n);
    let mut noise = DMatrix::zeros(2 * n, 2 * n);
    let (fault_equilibrium, endpoints) = match faulted_branch {
        None => (nominal_equilibrium.clone(), None),
        Some(b) => {
            let scale = fault_scale(grid, b, FAULT_SUSCEPTANCE_FACTOR);
            let lap_f = build_laplacian(grid, &scale).matrix;
            for r in 0..n {
                for c in 0..n {
                    let d = lap_f[(r, c)] - lap[(r, c)];
                    if d != 0.0 {
                        fault_delta[(r, n + c)] = -inv_inertia[r] * d;
                    }
                }
            }
            let (i, j) = grid.endpoints(b);
            for (r, sr) in [(i, 1.0), (j, -1.0)] {
                for (c, sc) in [(i, 1.0), (j, -1.0)] {
                    noise[(r, n + c)] = sigma * inv_inertia[r] * sr * sc;
                }
            }
            let theta_f = equilibrium_angles(grid, &scale)?;
            (stack_angles(&theta_f), Some((i, j)))
        }
    };

    Ok(StateSpace {
        n,
        nominal,
        fault_delta,
        noise,
        forcing,
        faulted_branch,
        sigma,
        nominal_equilibrium,
        fault_equilibrium,
        endpoints,
        inv_inertia,
    })
}

pub(crate) fn drift(grid: &Grid, laplacian: &DMatrix<f64>, inv_inertia: &[f64]) -> DMatrix<f64> {
    let n = grid.n_buses();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for r in 0..n {
        a[(r, r)] = -grid.buses()[r].damping * inv_inertia[r];
        for c in 0..n {
            let l = laplacian[(r, c)];
            if l != 0.0 {
                a[(r, n + c)] = -inv_inertia[r] * l;
            }
        }
        a[(n + r, r)] = 1.0;
    }
    a
}

pub(crate) fn stack_angles(theta: &DVector<f64>) -> DVector<f64> {
    let n = theta.len();
    let mut x = DVector::zeros(2 * n);
    x.rows_mut(n, n).copy_from(theta);
    x
}

impl StateSpace {
    pub fn n_buses(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    /// Drift while the fault is on, `A + δA`.
    pub fn fault_drift(&self) -> DMatrix<f64> {
        &self.nominal + &self.fault_delta
    }

    /// Pre-fault equilibrium `(0, θ*)`, also the post-clearing fixed point.
    pub fn nominal_equilibrium(&self) -> &DVector<f64> {
        &self.nominal_equilibrium
    }

    /// Fixed point of the fault-on drift.
    pub fn fault_equilibrium(&self) -> &DVector<f64> {
        &self.fault_equilibrium
    }

    /// Rank-one factors of the noise matrix: `G = u vᵀ` with `u` returned
    /// and `vᵀ x = θ_i - θ_j` for the returned endpoint pair.
    pub fn noise_factors(&self) -> Option<(DVector<f64>, (usize, usize))> {
        let (i, j) = self.endpoints?;
        let mut u = DVector::zeros(2 * self.n);
        u[i] = self.sigma * self.inv_inertia[i];
        u[j] = -self.sigma * self.inv_inertia[j];
        Some((u, (i, j)))
    }

    pub fn apply_noise(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.noise_factors() {
            None => DVector::zeros(2 * self.n),
            Some((u, (i, j))) => u * (x[self.n + i] - x[self.n + j]),
        }
    }
}
