//! Exact first and second moments of the fault-on linear SDE, used as an
//! oracle for the stochastic propagator.

use nalgebra::{DMatrix, DVector};
use ode_solvers::{Dop853, OutputType, System};

use super::{DynamicsError, StateSpace};

#[derive(Debug, Clone)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

struct MomentOde {
    drift: DMatrix<f64>,
    forcing: DVector<f64>,
    noise: DMatrix<f64>,
}

impl System<f64, DVector<f64>> for MomentOde {
    fn system(&self, _t: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let d = self.forcing.len();
        let m = y.rows(0, d);
        let c = DMatrix::from_column_slice(d, d, &y.as_slice()[d..]);
        let dm = &self.drift * m + &self.forcing;
        // Itô: Ċ = A C + C Aᵀ + G (C + m mᵀ) Gᵀ.
        let second = &c + m * m.transpose();
        let ac = &self.drift * &c;
        let dc = &ac + ac.transpose() + &self.noise * second * self.noise.transpose();
        dy.rows_mut(0, d).copy_from(&dm);
        dy.as_mut_slice()[d..].copy_from_slice(dc.as_slice());
    }
}

/// Mean and covariance at time `t` of the fault-on SDE started from the
/// deterministic state `x0`, by high-order adaptive integration of the
/// moment equations.
pub fn fault_on_moments(ss: &StateSpace, x0: &DVector<f64>, t: f64) -> Result<Moments, DynamicsError> {
    let d = ss.dim();
    let mut y0 = DVector::zeros(d + d * d);
    y0.rows_mut(0, d).copy_from(x0);
    if t <= 0.0 {
        return Ok(Moments { mean: x0.clone(), covariance: DMatrix::zeros(d, d) });
    }
    let ode = MomentOde { drift: ss.fault_drift(), forcing: ss.forcing.clone(), noise: ss.noise.clone() };
    let mut solver = Dop853::from_param(
        ode, 0.0, t, t, y0, 1e-12, 1e-14, 0.9, 0.0, 0.333, 6.0, t, 0.0, 10_000_000, u32::MAX,
        OutputType::Sparse,
    );
    solver.integrate().map_err(|e| DynamicsError::Integrator(e.to_string()))?;
    let y = solver.y_out().last().expect("integrator produced output").clone();
    let mean = y.rows(0, d).into_owned();
    let covariance = DMatrix::from_column_slice(d, d, &y.as_slice()[d..]);
    Ok(Moments { mean, covariance })
}

/// Exact moments after `steps` steps of the discrete scheme
/// `y ← E (y + G (y + x̃) ΔW)`, `y = x - x̃`, used by the stochastic
/// propagator. Comparing against [`fault_on_moments`] isolates the
/// step-size bias of the scheme from sampling error.
pub fn scheme_moments(ss: &StateSpace, x0: &DVector<f64>, dt: f64, steps: usize) -> Moments {
    let e = (ss.fault_drift() * dt).exp();
    let eq = ss.fault_equilibrium();
    let g = &ss.noise;
    let mut mu = x0 - eq;
    let mut r = &mu * mu.transpose();
    for _ in 0..steps {
        let cross = &mu * eq.transpose();
        let inner = &r + &cross + cross.transpose() + eq * eq.transpose();
        let kicked = &r + g * inner * g.transpose() * dt;
        r = &e * kicked * e.transpose();
        mu = &e * mu;
    }
    let covariance = &r - &mu * mu.transpose();
    Moments { mean: mu + eq, covariance }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::assemble_state_space;
    use crate::grid::tests::triangle;

    #[test]
    fn zero_noise_has_zero_covariance_and_exact_mean() {
        let ss = assemble_state_space(&triangle(), Some(0), 0.0).unwrap();
        let x0 = ss.nominal_equilibrium().clone();
        let m = fault_on_moments(&ss, &x0, 0.4).unwrap();
        assert!(m.covariance.amax() < 1e-14);
        let eq = ss.fault_equilibrium();
        let want = (ss.fault_drift() * 0.4).exp() * (&x0 - eq) + eq;
        assert!((m.mean - want).amax() < 1e-11);
    }

    #[test]
    fn scheme_covariance_converges_to_ode_covariance() {
        let ss = assemble_state_space(&triangle(), Some(1), 4.0).unwrap();
        let x0 = ss.nominal_equilibrium().clone();
        let exact = fault_on_moments(&ss, &x0, 0.5).unwrap();
        let coarse = scheme_moments(&ss, &x0, 0.01, 50);
        let fine = scheme_moments(&ss, &x0, 0.001, 500);
        assert!((&coarse.mean - &exact.mean).amax() < 1e-10, "mean is exact at any step");
        let ec = (&coarse.covariance - &exact.covariance).amax();
        let ef = (&fine.covariance - &exact.covariance).amax();
        assert!(ef < ec / 5.0, "first-order weak bias: {ec:e} -> {ef:e}");
        assert!(exact.covariance.amax() > 1e-6);
    }
}
