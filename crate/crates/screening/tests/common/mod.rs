#![allow(dead_code)]

use std::path::PathBuf;

use dynscreen::config::{FaultedSelector, ScreeningConfig};
use dynscreen_core::dynamics::{assemble_state_space, propagate_deterministic};
use dynscreen_core::grid::parse_grid_json;
use dynscreen_core::overload::{line_overload, SusceptanceSchedule};
use dynscreen_core::rare_event::{CeParams, DurationFamily};

pub const TOY_SUPPORT: [f64; 5] = [0.2, 0.5, 1.0, 2.0, 4.0];
pub const TOY_HORIZON: f64 = 10.0;
pub const TOY_RATE: f64 = 0.5;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

/// Deterministic screening of the three-bus fixture under the discrete law.
pub fn toy_config() -> ScreeningConfig {
    ScreeningConfig {
        grid: fixture("toy3.json"),
        horizon: TOY_HORIZON,
        fault_rate: TOY_RATE,
        duration_family: DurationFamily::Discrete { support: TOY_SUPPORT.to_vec() },
        noise_scale: 0.0,
        gammas: vec![0.0, 1.0],
        samples_per_branch: 400,
        samples: 400,
        ce: CeParams { samples_per_iteration: 200, max_iterations: 5, ..Default::default() },
        top_scenarios: 20,
        ..Default::default()
    }
}

pub fn ieee118_config() -> ScreeningConfig {
    ScreeningConfig { grid: fixture("case118.m"), faulted: FaultedSelector::All, ..Default::default() }
}

/// `[faulted][branch]` exact `P[S ≥ threshold | fault]` of the toy law,
/// from full deterministic trajectories.
pub fn toy_conditional(threshold: f64) -> Vec<Vec<f64>> {
    let grid = parse_grid_json(&std::fs::read_to_string(fixture("toy3.json")).unwrap()).unwrap();
    let w: Vec<f64> = TOY_SUPPORT.iter().map(|t| (-TOY_RATE * t).exp()).collect();
    let z: f64 = w.iter().sum();
    (0..grid.n_branches())
        .map(|a| {
            let ss = assemble_state_space(&grid, Some(a), 0.0).unwrap();
            let mut row = vec![0.0; grid.n_branches()];
            for (&tau, &wt) in TOY_SUPPORT.iter().zip(&w) {
                let traj = propagate_deterministic(&ss, ss.nominal_equilibrium(), tau, TOY_HORIZON, 0.01).unwrap();
                let sched = SusceptanceSchedule::from_trajectory(&traj);
                for (b, q) in row.iter_mut().enumerate() {
                    if line_overload(&traj, &grid, b, &sched) >= threshold {
                        *q += wt / z;
                    }
                }
            }
            row
        })
        .collect()
}
