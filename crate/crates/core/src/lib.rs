//! Dynamic N-1 screening core.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] parses case files, validates topology and computes the
//!   pre-fault operating point.
//! * [`dynamics`] assembles the linear swing-equation state space, builds
//!   eigen-mode propagators and advances deterministic or noisy trajectories.
//! * [`overload`] turns trajectories into overload indicators, safety
//!   polytope checks and operator risk zones.
//! * [`rare_event`] samples fault scenarios and estimates exceedance
//!   probabilities by plain Monte Carlo or cross-entropy importance sampling.

pub mod dynamics;
pub mod grid;
pub mod overload;
pub mod rare_event;
pub mod scenario;

pub use grid::{Branch, Bus, BusKind, Grid, GridError};
pub use scenario::FaultScenario;

/// Susceptance multiplier applied to the faulted branch while the fault is on.
pub const FAULT_SUSCEPTANCE_FACTOR: f64 = 2.0 / 3.0;
