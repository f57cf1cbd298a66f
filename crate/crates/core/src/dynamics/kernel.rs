//! Fast overload scoring for many scenarios on one grid.
//!
//! Per faulted branch the engine caches the fault-on eigenbasis, the map
//! from modal coordinates to monitored flows and the basis change into the
//! post-clearing coordinates. Flows are produced a chunk of steps at a time
//! by one matrix product. Once the drift is deterministic, each branch's
//! future flow deviation is bounded by `Σ_blocks ‖W_blk‖ ‖η_blk‖`, which
//! never grows for a stable drift; when that bound settles every branch on
//! one side of its limit the rest of the horizon is accounted for without
//! stepping.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::interval::StepMap;
use super::state_space::stack_angles;
use super::{assemble_state_space, horizon_steps, snap_steps, DynamicsError, StateSpace};
use crate::grid::{equilibrium_angles, nominal_scale, Grid};
use crate::scenario::FaultScenario;
use crate::FAULT_SUSCEPTANCE_FACTOR;

// Relative guard band keeping bound-based decisions away from rounding ties.
const DECISION_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSettings {
    /// Integration step in seconds.
    pub dt: f64,
    /// Simulation horizon in seconds.
    pub horizon: f64,
    /// Steps evaluated per flow product.
    pub chunk: usize,
    /// Stop stepping once every branch's indicator is settled.
    pub early_exit: bool,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self { dt: 0.01, horizon: 20.0, chunk: 64, early_exit: true }
    }
}

/// Overload seconds of one scenario on every monitored branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScore {
    /// `S_b` per monitored branch, in monitored order.
    pub overload_seconds: Vec<f64>,
    /// Sum over monitored branches.
    pub global: f64,
    /// Steps actually stepped (diagnostic).
    pub steps_simulated: usize,
}

struct Phase<'a> {
    map: &'a StepMap,
    flow_map: &'a DMatrix<f64>,
    flow_eq: &'a [f64],
    norms: Option<&'a DMatrix<f64>>,
}

struct NominalPart {
    map: StepMap,
    x0: DVector<f64>,
    flow_map: DMatrix<f64>,
    flows: Vec<f64>,
    norms: Option<DMatrix<f64>>,
}

struct FaultPart {
    map: StepMap,
    flow_map: DMatrix<f64>,
    flow_eq: Vec<f64>,
    norms: Option<DMatrix<f64>>,
    start: DVector<f64>,
    transfer: DMatrix<f64>,
    offset: DVector<f64>,
    noise_dir: DVector<f64>,
    noise_row: DVector<f64>,
    noise_offset: f64,
}

pub struct DynamicsEngine {
    grid: Grid,
    settings: EngineSettings,
    total: usize,
    limits: Vec<f64>,
    nominal: NominalPart,
    faults: Vec<OnceLock<Result<Arc<FaultPart>, String>>>,
}

impl std::fmt::Debug for DynamicsEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DynamicsEngine")
            .field("buses", &self.grid.n_buses())
            .field("branches", &self.grid.n_branches())
            .field("settings", &self.settings)
            .finish()
    }
}

fn flow_rows(map: &StepMap, grid: &Grid, monitored: &[usize], faulted: Option<usize>) -> DMatrix<f64> {
    let n = grid.n_buses();
    let mut w = DMatrix::zeros(monitored.len(), map.dim());
    for (r, &b) in monitored.iter().enumerate() {
        let (i, j) = grid.endpoints(b);
        let beta = effective_beta(grid, b, faulted);
        let row = (map.state_row(n + i) - map.state_row(n + j)) * beta;
        w.set_row(r, &row.transpose());
    }
    w
}

fn effective_beta(grid: &Grid, branch: usize, faulted: Option<usize>) -> f64 {
    let beta = grid.branches()[branch].beta;
    if faulted == Some(branch) {
        FAULT_SUSCEPTANCE_FACTOR * beta
    } else {
        beta
    }
}

fn block_norms(map: &StepMap, flow_map: &DMatrix<f64>, horizon: f64) -> Option<DMatrix<f64>> {
    let form = map.form()?;
    let blocks = form.blocks();
    let mut out = DMatrix::zeros(flow_map.nrows(), blocks.len());
    for (c, b) in blocks.iter().enumerate() {
        for r in 0..flow_map.nrows() {
            let mut s = 0.0;
            for k in b.start()..b.start() + b.size() {
                s += flow_map[(r, k)] * flow_map[(r, k)];
            }
            out[(r, c)] = s.sqrt();
        }
    }
    // A slightly positive gauge rate must not let the bound be exceeded.
    Some(out * (form.max_real_part().max(0.0) * horizon).exp())
}

impl DynamicsEngine {
    pub fn new(grid: Grid, settings: EngineSettings) -> Result<Self, DynamicsError> {
        let total = horizon_steps(settings.horizon, settings.dt)?;
        if settings.chunk == 0 {
            return Err(DynamicsError::Contract("chunk size must be positive".into()));
        }
        let ss = assemble_state_space(&grid, None, 0.0)?;
        let map = StepMap::new(&ss.nominal, settings.dt)?;
        if let Some(form) = map.form() {
            if form.max_real_part() > 1e-8 {
                return Err(DynamicsError::Contract(format!(
                    "nominal drift is unstable (max real part {:.3e})",
                    form.max_real_part()
                )));
            }
        }
        let monitored = grid.monitored().to_vec();
        let flow_map = flow_rows(&map, &grid, &monitored, None);
        let theta = equilibrium_angles(&grid, &nominal_scale(&grid))?;
        let all = grid.flows(theta.as_slice());
        let flows = monitored.iter().map(|&b| all[b]).collect();
        let limits = monitored.iter().map(|&b| grid.branches()[b].limit).collect();
        let norms = block_norms(&map, &flow_map, settings.horizon);
        let faults = (0..grid.n_branches()).map(|_| OnceLock::new()).collect();
        Ok(Self {
            total,
            limits,
            nominal: NominalPart { map, x0: stack_angles(&theta), flow_map, flows, norms },
            faults,
            grid,
            settings,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    pub fn total_steps(&self) -> usize {
        self.total
    }

    pub fn monitored(&self) -> &[usize] {
        self.grid.monitored()
    }

    /// Pre-fault equilibrium state.
    pub fn initial_state(&self) -> &DVector<f64> {
        &self.nominal.x0
    }

    /// Pre-fault flows on the monitored branches.
    pub fn nominal_flows(&self) -> &[f64] {
        &self.nominal.flows
    }

    pub fn state_space(&self, scenario: &FaultScenario) -> Result<StateSpace, DynamicsError> {
        assemble_state_space(&self.grid, scenario.faulted_branch, scenario.sigma)
    }

    /// Builds the cached data for one faulted branch if not yet present.
    pub fn prepare(&self, branch: usize) -> Result<(), DynamicsError> {
        self.fault(branch).map(|_| ())
    }

    pub fn prepared_count(&self) -> usize {
        self.faults.iter().filter(|c| c.get().is_some()).count()
    }

    fn fault(&self, branch: usize) -> Result<Arc<FaultPart>, DynamicsError> {
        let cell = self.faults.get(branch).ok_or(DynamicsError::InvalidBranch(branch))?;
        cell.get_or_init(|| self.build_fault(branch).map(Arc::new).map_err(|e| e.to_string()))
            .clone()
            .map_err(DynamicsError::Eigen)
    }

    fn build_fault(&self, branch: usize) -> Result<FaultPart, DynamicsError> {
        let grid = &self.grid;
        let n = grid.n_buses();
        let ss = assemble_state_space(grid, Some(branch), 1.0)?;
        let map = StepMap::new(&ss.fault_drift(), self.settings.dt)?;
        let eq = ss.fault_equilibrium();
        let monitored = grid.monitored();
        let flow_map = flow_rows(&map, grid, monitored, Some(branch));
        let flow_eq = monitored
            .iter()
            .map(|&b| {
                let (i, j) = grid.endpoints(b);
                effective_beta(grid, b, Some(branch)) * (eq[n + i] - eq[n + j])
            })
            .collect();
        let norms = block_norms(&map, &flow_map, self.settings.horizon);
        let x0 = &self.nominal.x0;
        let start = map.lift(&(x0 - eq));
        let lowered = map.lower_columns(&DMatrix::identity(2 * n, 2 * n));
        let transfer = match self.nominal.map.form() {
            Some(form) => form.inverse() * lowered,
            None => lowered,
        };
        let offset = self.nominal.map.lift(&(eq - x0));
        let (u, (i, j)) = ss.noise_factors().expect("faulted branch has noise factors");
        Ok(FaultPart {
            noise_dir: map.lift(&u),
            noise_row: map.state_row(n + i) - map.state_row(n + j),
            noise_offset: eq[n + i] - eq[n + j],
            map,
            flow_map,
            flow_eq,
            norms,
            start,
            transfer,
            offset,
        })
    }

    /// Scores one scenario, drawing the fault-on Brownian increments from
    /// `rng` when `scenario.sigma > 0` (and drawing nothing otherwise).
    pub fn score<R: Rng + ?Sized>(
        &self,
        scenario: &FaultScenario,
        rng: &mut R,
    ) -> Result<ScenarioScore, DynamicsError> {
        if (scenario.horizon - self.settings.horizon).abs() > 1e-9 * self.settings.horizon {
            return Err(DynamicsError::Contract(format!(
                "scenario horizon {} differs from engine horizon {}",
                scenario.horizon, self.settings.horizon
            )));
        }
        if !scenario.is_valid() {
            return Err(DynamicsError::Contract(format!("invalid scenario {scenario:?}")));
        }
        let dt = self.settings.dt;
        let m = self.limits.len();
        let mut counts = vec![0usize; m];
        let k_tau = match scenario.faulted_branch {
            Some(_) => snap_steps(scenario.duration, dt, self.total),
            None => 0,
        };
        let mut simulated = 0;

        if k_tau == 0 {
            for (c, (f, lim)) in counts.iter_mut().zip(self.nominal.flows.iter().zip(&self.limits)) {
                if f.abs() > *lim {
                    *c = self.total;
                }
            }
            return Ok(self.finish(counts, 0));
        }

        let fault = self.fault(scenario.faulted_branch.expect("k_tau > 0 implies a fault"))?;
        let noisy = scenario.sigma > 0.0;
        let phase = Phase {
            map: &fault.map,
            flow_map: &fault.flow_map,
            flow_eq: &fault.flow_eq,
            norms: fault.norms.as_ref(),
        };
        let mut eta = fault.start.clone();
        let mut kick = |eta: &mut DVector<f64>, rng: &mut R| {
            if noisy {
                let dw: f64 = rng.sample::<f64, _>(StandardNormal) * dt.sqrt();
                if dw != 0.0 {
                    let s = scenario.sigma * (fault.noise_row.dot(eta) + fault.noise_offset) * dw;
                    eta.axpy(s, &fault.noise_dir, 1.0);
                }
            }
        };
        simulated += self.run_phase(&phase, &mut eta, k_tau, !noisy, &mut counts, rng, &mut kick);

        let mut zeta = &fault.transfer * &eta + &fault.offset;
        let phase = Phase {
            map: &self.nominal.map,
            flow_map: &self.nominal.flow_map,
            flow_eq: &self.nominal.flows,
            norms: self.nominal.norms.as_ref(),
        };
        simulated += self.run_phase(&phase, &mut zeta, self.total - k_tau, true, &mut counts, rng, &mut |_, _| {});
        Ok(self.finish(counts, simulated))
    }

    fn finish(&self, counts: Vec<usize>, simulated: usize) -> ScenarioScore {
        let dt = self.settings.dt;
        let overload_seconds: Vec<f64> = counts.iter().map(|&c| c as f64 * dt).collect();
        let global = counts.iter().sum::<usize>() as f64 * dt;
        ScenarioScore { overload_seconds, global, steps_simulated: simulated }
    }

    /// Counts indicator hits at the `steps` left endpoints of a constant-drift
    /// interval, leaving `coords` at the interval's end. Returns the number of
    /// steps stepped explicitly.
    #[allow(clippy::too_many_arguments)]
    fn run_phase<R: Rng + ?Sized>(
        &self,
        phase: &Phase<'_>,
        coords: &mut DVector<f64>,
        steps: usize,
        may_skip: bool,
        counts: &mut [usize],
        rng: &mut R,
        kick: &mut dyn FnMut(&mut DVector<f64>, &mut R),
    ) -> usize {
        let dim = coords.len();
        let m = counts.len();
        let chunk = self.settings.chunk.min(steps.max(1));
        let mut block = DMatrix::zeros(dim, chunk);
        let mut flows = DMatrix::zeros(m, chunk);
        let mut scratch = DVector::zeros(dim);
        let skip = may_skip && self.settings.early_exit && phase.norms.is_some();
        let mut k = 0;
        while k < steps {
            if skip && self.settle(phase, coords, steps - k, counts) {
                return k;
            }
            let cols = chunk.min(steps - k);
            for c in 0..cols {
                block.set_column(c, coords);
                kick(coords, rng);
                phase.map.advance(coords, &mut scratch);
            }
            let mut f = flows.columns_mut(0, cols);
            f.gemm(1.0, phase.flow_map, &block.columns(0, cols), 0.0);
            for c in 0..cols {
                for (b, count) in counts.iter_mut().enumerate() {
                    if (phase.flow_eq[b] + f[(b, c)]).abs() > self.limits[b] {
                        *count += 1;
                    }
                }
            }
            k += cols;
        }
        steps
    }

    /// If every branch is settled above or below its limit for the rest of
    /// the interval, credits the remaining steps, advances `coords` to the
    /// interval end and returns true.
    fn settle(&self, phase: &Phase<'_>, coords: &mut DVector<f64>, remaining: usize, counts: &mut [usize]) -> bool {
        let norms = phase.norms.expect("settle needs block norms");
        let form = phase.map.form().expect("block norms imply a modal map");
        let blocks = form.blocks();
        let mags: Vec<f64> = blocks
            .iter()
            .map(|b| {
                let s = b.start();
                if b.size() == 1 {
                    coords[s].abs()
                } else {
                    coords[s].hypot(coords[s + 1])
                }
            })
            .collect();
        let mut above = Vec::new();
        for b in 0..counts.len() {
            let bound: f64 = norms.row(b).iter().zip(&mags).map(|(w, g)| w * g).sum();
            let f = phase.flow_eq[b].abs();
            let lim = self.limits[b];
            if f + bound <= lim * (1.0 - DECISION_MARGIN) {
                continue;
            }
            if f - bound > lim * (1.0 + DECISION_MARGIN) {
                above.push(b);
                continue;
            }
            return false;
        }
        for b in above {
            counts[b] += remaining;
        }
        let t = remaining as f64 * self.settings.dt;
        form.apply_exp(&form.exp_factors(t), coords.as_mut_slice());
        true
    }
}
