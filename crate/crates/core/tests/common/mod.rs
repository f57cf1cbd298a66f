#![allow(dead_code)]

use dynscreen_core::dynamics::{assemble_state_space, propagate_deterministic, DynamicsEngine, EngineSettings};
use dynscreen_core::grid::{parse_grid_json, parse_matpower_case, CaseDefaults};
use dynscreen_core::overload::{line_overload, SusceptanceSchedule};
use dynscreen_core::rare_event::{DurationFamily, ScenarioDistribution, ScenarioDraw};
use dynscreen_core::Grid;

pub const TOY_SUPPORT: [f64; 5] = [0.2, 0.5, 1.0, 2.0, 4.0];
pub const TOY_HORIZON: f64 = 10.0;
pub const TOY_RATE: f64 = 0.5;

pub fn toy_grid() -> Grid {
    parse_grid_json(include_str!("../../fixtures/toy3.json")).unwrap()
}

pub fn ieee118() -> Grid {
    parse_matpower_case(include_str!("../../fixtures/case118.m"))
        .unwrap()
        .to_grid(&CaseDefaults::default())
        .unwrap()
}

pub fn toy_engine() -> DynamicsEngine {
    DynamicsEngine::new(toy_grid(), EngineSettings { horizon: TOY_HORIZON, ..Default::default() }).unwrap()
}

pub fn toy_nominal() -> ScenarioDistribution {
    ScenarioDistribution::uniform(3, TOY_RATE, DurationFamily::Discrete { support: TOY_SUPPORT.to_vec() })
}

/// Every `(draw, probability, per-branch overload seconds)` of the toy law,
/// scored through full trajectories rather than the engine.
pub fn toy_enumeration() -> Vec<(ScenarioDraw, f64, Vec<f64>)> {
    let grid = toy_grid();
    let nominal = toy_nominal();
    let mut out = Vec::new();
    for a in 0..grid.n_branches() {
        let ss = assemble_state_space(&grid, Some(a), 0.0).unwrap();
        for &tau in &TOY_SUPPORT {
            let draw = ScenarioDraw { branch: Some(a), duration: tau };
            let traj = propagate_deterministic(&ss, ss.nominal_equilibrium(), tau, TOY_HORIZON, 0.01).unwrap();
            let sched = SusceptanceSchedule::from_trajectory(&traj);
            let s = (0..grid.n_branches()).map(|b| line_overload(&traj, &grid, b, &sched)).collect();
            out.push((draw, nominal.density(&draw), s));
        }
    }
    out
}
