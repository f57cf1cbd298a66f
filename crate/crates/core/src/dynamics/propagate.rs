use nalgebra::{DMatrix, DVector};

use super::interval::Interval;
use super::{horizon_steps, snap_steps, DynamicsError, NoisePath, StateSpace, Trajectory};

/// Fault-on noise in the fault interval's coordinates: an increment `ΔW`
/// adds `dir · (rowᵀ η + offset) ΔW`.
#[derive(Debug, Clone)]
struct NoiseCoupling {
    dir: DVector<f64>,
    row: DVector<f64>,
    offset: f64,
}

/// Exact-per-step propagator for one scenario's state space.
///
/// Each interval is advanced in its own eigenbasis around its own fixed
/// point, so the pure-drift part of every step is the exact flow. With
/// noise the step is `η ← exp(B dt)(η + a (cᵀη + s) ΔW)`, i.e. the noise
/// kick is applied at the left end of the step.
#[derive(Debug, Clone)]
pub struct Propagator {
    n: usize,
    dt: f64,
    faulted_branch: Option<usize>,
    fault: Interval,
    nominal: Interval,
    noise: Option<NoiseCoupling>,
}

impl Propagator {
    pub fn new(ss: &StateSpace, dt: f64) -> Result<Self, DynamicsError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DynamicsError::Contract(format!("step {dt} must be positive")));
        }
        let nominal = Interval::new(&ss.nominal, ss.nominal_equilibrium().clone(), dt)?;
        let fault = if ss.faulted_branch.is_some() {
            Interval::new(&ss.fault_drift(), ss.fault_equilibrium().clone(), dt)?
        } else {
            nominal.clone()
        };
        let n = ss.n_buses();
        let noise = ss.noise_factors().filter(|_| ss.sigma > 0.0).map(|(u, (i, j))| {
            let row = fault.map.state_row(n + i) - fault.map.state_row(n + j);
            let eq = ss.fault_equilibrium();
            NoiseCoupling { dir: fault.map.lift(&u), row, offset: eq[n + i] - eq[n + j] }
        });
        Ok(Self { n, dt, faulted_branch: ss.faulted_branch, fault, nominal, noise })
    }

    /// Same map with the drift exponentials computed densely instead of
    /// through the eigenbasis.
    pub fn new_dense(ss: &StateSpace, dt: f64) -> Result<Self, DynamicsError> {
        use super::interval::StepMap;
        let mut p = Self::new(ss, dt)?;
        p.nominal.map = StepMap::dense(&ss.nominal, dt);
        p.fault.map = if ss.faulted_branch.is_some() {
            StepMap::dense(&ss.fault_drift(), dt)
        } else {
            p.nominal.map.clone()
        };
        let n = ss.n_buses();
        p.noise = ss.noise_factors().filter(|_| ss.sigma > 0.0).map(|(u, (i, j))| {
            let eq = ss.fault_equilibrium();
            let mut row = DVector::zeros(2 * n);
            row[n + i] = 1.0;
            row[n + j] = -1.0;
            NoiseCoupling { dir: u, row, offset: eq[n + i] - eq[n + j] }
        });
        Ok(p)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn is_modal(&self) -> bool {
        self.fault.map.form().is_some() && self.nominal.map.form().is_some()
    }

    pub fn deterministic(
        &self,
        x0: &DVector<f64>,
        duration: f64,
        horizon: f64,
    ) -> Result<Trajectory, DynamicsError> {
        self.run(x0, None, duration, horizon)
    }

    pub fn stochastic(
        &self,
        x0: &DVector<f64>,
        path: &NoisePath,
        duration: f64,
        horizon: f64,
    ) -> Result<Trajectory, DynamicsError> {
        if (path.dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(DynamicsError::Contract(format!(
                "noise path step {} differs from propagator step {}",
                path.dt, self.dt
            )));
        }
        self.run(x0, Some(&path.increments), duration, horizon)
    }

    fn run(
        &self,
        x0: &DVector<f64>,
        increments: Option<&[f64]>,
        duration: f64,
        horizon: f64,
    ) -> Result<Trajectory, DynamicsError> {
        if x0.len() != 2 * self.n {
            return Err(DynamicsError::Contract(format!(
                "initial state has length {}, expected {}",
                x0.len(),
                2 * self.n
            )));
        }
        if !(duration >= 0.0) {
            return Err(DynamicsError::Contract(format!("duration {duration} must be non-negative")));
        }
        let total = horizon_steps(horizon, self.dt)?;
        let k_tau = if self.faulted_branch.is_some() { snap_steps(duration, self.dt, total) } else { 0 };
        if let Some(inc) = increments {
            if inc.len() < k_tau {
                return Err(DynamicsError::Contract(format!(
                    "noise path has {} increments, fault needs {k_tau}",
                    inc.len()
                )));
            }
        }

        let dim = 2 * self.n;
        let mut states = DMatrix::zeros(dim, total + 1);
        let mut scratch = DVector::zeros(dim);

        let mut eta = self.fault.coords_of(x0);
        let mut cols = DMatrix::zeros(dim, k_tau + 1);
        cols.set_column(0, &eta);
        for k in 0..k_tau {
            if let (Some(inc), Some(noise)) = (increments, &self.noise) {
                let dw = inc[k];
                if dw != 0.0 {
                    let kick = (noise.row.dot(&eta) + noise.offset) * dw;
                    eta.axpy(kick, &noise.dir, 1.0);
                }
            }
            self.fault.map.advance(&mut eta, &mut scratch);
            cols.set_column(k + 1, &eta);
        }
        states.columns_mut(0, k_tau + 1).copy_from(&self.fault.states_of(&cols));
        states.set_column(0, x0);

        let x_tau = states.column(k_tau).into_owned();
        let mut zeta = self.nominal.coords_of(&x_tau);
        let post = total - k_tau;
        let mut cols = DMatrix::zeros(dim, post);
        for k in 0..post {
            self.nominal.map.advance(&mut zeta, &mut scratch);
            cols.set_column(k, &zeta);
        }
        if post > 0 {
            states.columns_mut(k_tau + 1, post).copy_from(&self.nominal.states_of(&cols));
        }

        Ok(Trajectory {
            dt: self.dt,
            n_buses: self.n,
            states,
            faulted_branch: self.faulted_branch,
            fault_steps: k_tau,
            duration,
        })
    }
}

pub fn propagate_deterministic(
    ss: &StateSpace,
    x0: &DVector<f64>,
    duration: f64,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory, DynamicsError> {
    Propagator::new(ss, dt)?.deterministic(x0, duration, horizon)
}

pub fn propagate_stochastic(
    ss: &StateSpace,
    x0: &DVector<f64>,
    path: &NoisePath,
    duration: f64,
    horizon: f64,
) -> Result<Trajectory, DynamicsError> {
    Propagator::new(ss, path.dt)?.stochastic(x0, path, duration, horizon)
}

/// Explicit first-order scheme `x ← x + (A x + P) dt + G x ΔW`, with the
/// fault-on drift before clearing and the nominal drift after. Used as an
/// independent oracle at fine steps.
pub fn euler_maruyama(
    ss: &StateSpace,
    x0: &DVector<f64>,
    path: &NoisePath,
    duration: f64,
    horizon: f64,
) -> Result<Trajectory, DynamicsError> {
    let dt = path.dt;
    let total = horizon_steps(horizon, dt)?;
    let k_tau = if ss.faulted_branch.is_some() { snap_steps(duration, dt, total) } else { 0 };
    if path.len() < k_tau {
        return Err(DynamicsError::Contract("noise path shorter than the fault".into()));
    }
    let af = ss.fault_drift();
    let mut states = DMatrix::zeros(ss.dim(), total + 1);
    let mut x = x0.clone();
    states.set_column(0, &x);
    let mut dx = DVector::zeros(ss.dim());
    for k in 0..total {
        let a = if k < k_tau { &af } else { &ss.nominal };
        dx.gemv(dt, a, &x, 0.0);
        dx.axpy(dt, &ss.forcing, 1.0);
        if k < k_tau && path.increments[k] != 0.0 {
            dx += ss.apply_noise(&x) * path.increments[k];
        }
        x += &dx;
        states.set_column(k + 1, &x);
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
