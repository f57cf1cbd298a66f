use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::eigen::{eigendecompose, BlockExp, ModalForm};
use super::DynamicsError;

/// Exact one-step map of a constant-drift interval, acting on deviation
/// coordinates `y = x - x_eq` (modal coordinates when the drift is
/// diagonalisable, physical otherwise).
#[derive(Debug, Clone)]
pub(crate) enum StepMap {
    Modal { form: Arc<ModalForm>, step: BlockExp },
    Dense { exp: DMatrix<f64> },
}

#[derive(Debug, Clone)]
pub(crate) struct Interval {
    pub map: StepMap,
    pub equilibrium: DVector<f64>,
}

impl StepMap {
    pub fn new(drift: &DMatrix<f64>, dt: f64) -> Result<Self, DynamicsError> {
        match eigendecompose(drift) {
            Ok(eig) => Ok(Self::from_form(Arc::new(eig.into_modal()), dt)),
            Err(DynamicsError::Defective { residual }) => {
                log::warn!("drift not diagonalisable (residual {residual:.2e}), using dense exponential");
                Ok(StepMap::Dense { exp: (drift * dt).exp() })
            }
            Err(e) => Err(e),
        }
    }

    pub fn from_form(form: Arc<ModalForm>, dt: f64) -> Self {
        let step = form.exp_factors(dt);
        StepMap::Modal { form, step }
    }

    pub fn dense(drift: &DMatrix<f64>, dt: f64) -> Self {
        StepMap::Dense { exp: (drift * dt).exp() }
    }

    pub fn dim(&self) -> usize {
        match self {
            StepMap::Modal { form, .. } => form.dim(),
            StepMap::Dense { exp } => exp.nrows(),
        }
    }

    pub fn form(&self) -> Option<&Arc<ModalForm>> {
        match self {
            StepMap::Modal { form, .. } => Some(form),
            StepMap::Dense { .. } => None,
        }
    }

    /// Maps a physical vector into this map's coordinates.
    pub fn lift(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            StepMap::Modal { form, .. } => form.to_coords(v),
            StepMap::Dense { .. } => v.clone(),
        }
    }

    pub fn lower_columns(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            StepMap::Modal { form, .. } => form.vectors() * c,
            StepMap::Dense { .. } => c.clone(),
        }
    }

    /// Row `r` of the coordinate-to-state map.
    pub fn state_row(&self, r: usize) -> DVector<f64> {
        match self {
            StepMap::Modal { form, .. } => form.vectors().row(r).transpose(),
            StepMap::Dense { exp } => {
                let mut e = DVector::zeros(exp.nrows());
                e[r] = 1.0;
                e
            }
        }
    }

    pub fn advance(&self, coords: &mut DVector<f64>, scratch: &mut DVector<f64>) {
        match self {
            StepMap::Modal { form, step } => form.apply_exp(step, coords.as_mut_slice()),
            StepMap::Dense { exp } => {
                scratch.gemv(1.0, exp, coords, 0.0);
                std::mem::swap(coords, scratch);
            }
        }
    }
}

impl Interval {
    pub fn new(drift: &DMatrix<f64>, equilibrium: DVector<f64>, dt: f64) -> Result<Self, DynamicsError> {
        Ok(Self { map: StepMap::new(drift, dt)?, equilibrium })
    }

    pub fn coords_of(&self, x: &DVector<f64>) -> DVector<f64> {
        self.map.lift(&(x - &self.equilibrium))
    }

    pub fn states_of(&self, coords: &DMatrix<f64>) -> DMatrix<f64> {
        let mut s = self.map.lower_columns(coords);
        for mut col in s.column_iter_mut() {
            col += &self.equilibrium;
        }
        s
    }
}
