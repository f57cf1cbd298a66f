//! Adaptive high-order integration of the deterministic piecewise-linear
//! system, independent of the eigenbasis propagator.

use nalgebra::{DMatrix, DVector};
use ode_solvers::{Dop853, OutputType, System};

use super::{horizon_steps, snap_steps, DynamicsError, StateSpace, Trajectory};

#[derive(Debug, Clone, Copy)]
pub struct ReferenceTolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for ReferenceTolerance {
    fn default() -> Self {
        Self { rtol: 1e-12, atol: 1e-13 }
    }
}

struct Affine<'a> {
    drift: &'a DMatrix<f64>,
    forcing: &'a DVector<f64>,
}

impl System<f64, DVector<f64>> for Affine<'_> {
    fn system(&self, _t: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        dy.copy_from(self.forcing);
        dy.gemv(1.0, self.drift, y, 1.0);
    }
}

/// Integrates `ẋ = A x + P` with the fault-on drift on `[0, k_τ dt]` and the
/// nominal drift afterwards, sampled on the same grid as the propagator.
pub fn reference_trajectory(
    ss: &StateSpace,
    x0: &DVector<f64>,
    duration: f64,
    horizon: f64,
    dt: f64,
    tol: ReferenceTolerance,
) -> Result<Trajectory, DynamicsError> {
    let total = horizon_steps(horizon, dt)?;
    let k_tau = if ss.faulted_branch.is_some() { snap_steps(duration, dt, total) } else { 0 };
    let fault = ss.fault_drift();
    let mut states = DMatrix::zeros(ss.dim(), total + 1);
    states.set_column(0, x0);
    let mut x = x0.clone();
    for (drift, from, to) in [(&fault, 0, k_tau), (&ss.nominal, k_tau, total)] {
        if to == from {
            continue;
        }
        let system = Affine { drift, forcing: &ss.forcing };
        let (t0, t1) = (from as f64 * dt, to as f64 * dt);
        let mut solver = Dop853::from_param(
            system, t0, t1, dt, x.clone(), tol.rtol, tol.atol, 0.9, 0.0, 0.333, 6.0, t1 - t0, 0.0,
            50_000_000, u32::MAX, OutputType::Dense,
        );
        solver.integrate().map_err(|e| DynamicsError::Integrator(e.to_string()))?;
        for (t, y) in solver.x_out().iter().zip(solver.y_out()) {
            let k = (t / dt).round();
            if (t - k * dt).abs() < 1e-9 * dt && k as usize > from && k as usize <= to {
                states.set_column(k as usize, y);
            }
        }
        x = solver.y_out().last().expect("integrator produced output").clone();
        states.set_column(to, &x);
    }
    Ok(Trajectory {
        dt,
        n_buses: ss.n_buses(),
        states,
        faulted_branch: ss.faulted_branch,
        fault_steps: k_tau,
        duration,
    })
}
