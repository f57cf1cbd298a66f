//! Linear swing-equation dynamics around the pre-fault operating point.
//!
//! State vectors stack frequency deviations first and angles second:
//! `x = (θ̇_1..θ̇_n, θ_1..θ_n)`.

mod eigen;
mod interval;
mod kernel;
mod moments;
mod noise;
mod propagate;
mod reference;
mod state_space;
mod trajectory;

use thiserror::Error;

pub use eigen::{eigendecompose, Eigensystem, ModalBlock, ModalForm, RECONSTRUCTION_TOLERANCE};
pub use kernel::{DynamicsEngine, EngineSettings, ScenarioScore};
pub use moments::{fault_on_moments, scheme_moments, Moments};
pub use noise::NoisePath;
pub use propagate::{
    euler_maruyama, propagate_deterministic, propagate_stochastic, Propagator,
};
pub use reference::{reference_trajectory, ReferenceTolerance};
pub use state_space::{assemble_state_space, StateSpace};
pub use trajectory::{horizon_steps, snap_steps, Trajectory};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("branch {0} does not exist")]
    InvalidBranch(usize),
    #[error("eigenbasis is ill-conditioned (reconstruction residual {residual:.2e})")]
    Defective { residual: f64 },
    #[error("eigen solver failed: {0}")]
    Eigen(String),
    #[error("{0}")]
    Contract(String),
    #[error("integrator failed: {0}")]
    Integrator(String),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error("trajectory io: {0}")]
    Io(#[from] std::io::Error),
}
