//! Static network model.

mod equilibrium;
mod json;
mod laplacian;
mod matpower;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use equilibrium::{equilibrium_angles, solve_pinned, BALANCE_TOLERANCE};
pub use json::{parse_grid_json, to_grid_json, GRID_FORMAT_VERSION};
pub use laplacian::{build_laplacian, fault_scale, nominal_scale, Laplacian};
pub use matpower::{parse_matpower_case, steady_flow_envelope, CaseDefaults, MatpowerCase};

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema violation at `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("branch {branch} references unknown bus {bus}")]
    UnknownBus { branch: usize, bus: u32 },
    #[error("duplicate bus id {0}")]
    DuplicateBus(u32),
    #[error("bus {id}: {reason}")]
    InvalidBus { id: u32, reason: String },
    #[error("branch {index}: {reason}")]
    InvalidBranch { index: usize, reason: String },
    #[error("grid is split into {components} islands")]
    Islanded { components: usize },
    #[error("monitored branch {0} does not exist")]
    Monitored(usize),
    #[error("reference bus {0} does not exist")]
    Reference(u32),
    #[error("net injection {imbalance:.3e} pu is not balanced")]
    Unbalanced { imbalance: f64 },
    #[error("grid has no buses")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Generator,
    Condenser,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    /// Inertia `m` in pu·s².
    #[serde(rename = "m")]
    pub inertia: f64,
    /// Damping `d` in pu·s.
    #[serde(rename = "d")]
    pub damping: f64,
    /// Net active-power injection in pu (generation minus demand).
    #[serde(rename = "p")]
    pub injection: f64,
    pub kind: BusKind,
    /// Active demand in pu, informational.
    #[serde(default, rename = "load")]
    pub demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    /// Susceptance `β` in pu.
    pub beta: f64,
    /// Thermal limit on |flow| in pu.
    pub limit: f64,
    #[serde(default)]
    pub transformer: bool,
}

/// Validated network. Buses keep file order; branch indices are zero-based.
#[derive(Debug, Clone)]
pub struct Grid {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    monitored: Vec<usize>,
    reference: u32,
    index: HashMap<u32, usize>,
    endpoints: Vec<(usize, usize)>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.buses == other.buses
            && self.branches == other.branches
            && self.monitored == other.monitored
            && self.reference == other.reference
    }
}

impl Grid {
    /// Validates and builds a grid. An empty `monitored` list is kept as is;
    /// use [`Grid::monitor_all`] to watch every branch.
    pub fn new(
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        monitored: Vec<usize>,
        reference: u32,
    ) -> Result<Self, GridError> {
        if buses.is_empty() {
            return Err(GridError::Empty);
        }
        let mut index = HashMap::with_capacity(buses.len());
        for (k, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, k).is_some() {
                return Err(GridError::DuplicateBus(bus.id));
            }
            validate_bus(bus)?;
        }
        let mut endpoints = Vec::with_capacity(branches.len());
        for (k, br) in branches.iter().enumerate() {
            let i = *index.get(&br.from).ok_or(GridError::UnknownBus {
                branch: k,
                bus: br.from,
            })?;
            let j = *index.get(&br.to).ok_or(GridError::UnknownBus {
                branch: k,
                bus: br.to,
            })?;
            if i == j {
                return Err(GridError::InvalidBranch {
                    index: k,
                    reason: "self loop".into(),
                });
            }
            if !(br.beta.is_finite() && br.beta > 0.0) {
                return Err(GridError::InvalidBranch {
                    index: k,
                    reason: format!("susceptance {} must be positive", br.beta),
                });
            }
            if !(br.limit.is_finite() && br.limit > 0.0) {
                return Err(GridError::InvalidBranch {
                    index: k,
                    reason: format!("limit {} must be positive", br.limit),
                });
            }
            endpoints.push((i, j));
        }
        for &m in &monitored {
            if m >= branches.len() {
                return Err(GridError::Monitored(m));
            }
        }
        if !index.contains_key(&reference) {
            return Err(GridError::Reference(reference));
        }
        let components = count_components(buses.len(), &endpoints);
        if components > 1 {
            return Err(GridError::Islanded { components });
        }
        let total: f64 = buses.iter().map(|b| b.injection).sum();
        let scale: f64 = buses.iter().map(|b| b.injection.abs()).sum::<f64>().max(1.0);
        if total.abs() > BALANCE_TOLERANCE * scale {
            return Err(GridError::Unbalanced { imbalance: total });
        }
        Ok(Self {
            buses,
            branches,
            monitored,
            reference,
            index,
            endpoints,
        })
    }

    pub fn monitor_all(mut self) -> Self {
        self.monitored = (0..self.branches.len()).collect();
        self
    }

    pub fn with_monitored(mut self, monitored: Vec<usize>) -> Result<Self, GridError> {
        if let Some(&bad) = monitored.iter().find(|&&m| m >= self.branches.len()) {
            return Err(GridError::Monitored(bad));
        }
        self.monitored = monitored;
        Ok(self)
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn monitored(&self) -> &[usize] {
        &self.monitored
    }

    pub fn reference(&self) -> u32 {
        self.reference
    }

    pub fn reference_index(&self) -> usize {
        self.index[&self.reference]
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// Zero-based bus positions of a branch's endpoints.
    pub fn endpoints(&self, branch: usize) -> (usize, usize) {
        self.endpoints[branch]
    }

    pub fn injections(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.injection).collect()
    }

    /// Branch flows `β (θ_from - θ_to)` for a full angle vector.
    pub fn flows(&self, angles: &[f64]) -> Vec<f64> {
        self.branches
            .iter()
            .zip(&self.endpoints)
            .map(|(br, &(i, j))| br.beta * (angles[i] - angles[j]))
            .collect()
    }

    /// Finds a branch by its endpoint bus ids in either orientation.
    pub fn find_branch(&self, a: u32, b: u32) -> Option<usize> {
        self.branches
            .iter()
            .position(|br| (br.from == a && br.to == b) || (br.from == b && br.to == a))
    }
}

fn validate_bus(bus: &Bus) -> Result<(), GridError> {
    let bad = |reason: String| GridError::InvalidBus { id: bus.id, reason };
    if !(bus.inertia.is_finite() && bus.inertia > 0.0) {
        return Err(bad(format!("inertia {} must be positive", bus.inertia)));
    }
    if !(bus.damping.is_finite() && bus.damping > 0.0) {
        return Err(bad(format!("damping {} must be positive", bus.damping)));
    }
    if !bus.injection.is_finite() {
        return Err(bad("injection is not finite".into()));
    }
    Ok(())
}

fn count_components(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut components = n;
    for &(a, b) in edges {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        if ra != rb {
            parent[ra] = rb;
            components -= 1;
        }
    }
    components
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn bus(id: u32, p: f64) -> Bus {
        Bus {
            id,
            inertia: 1.0,
            damping: 1.0,
            injection: p,
            kind: if p > 0.0 { BusKind::Generator } else { BusKind::Load },
            demand: (-p).max(0.0),
        }
    }

    pub fn branch(from: u32, to: u32, beta: f64) -> Branch {
        Branch {
            from,
            to,
            beta,
            limit: 1.0,
            transformer: false,
        }
    }

    pub fn triangle() -> Grid {
        Grid::new(
            vec![bus(1, 1.0), bus(2, -0.4), bus(3, -0.6)],
            vec![branch(1, 2, 10.0), branch(2, 3, 8.0), branch(1, 3, 5.0)],
            vec![0, 1, 2],
            1,
        )
        .unwrap()
    }

    #[test]
    fn builds_valid_triangle() {
        let g = triangle();
        assert_eq!(g.n_buses(), 3);
        assert_eq!(g.endpoints(1), (1, 2));
        assert_eq!(g.find_branch(3, 1), Some(2));
    }

    #[test]
    fn rejects_unknown_bus() {
        let err = Grid::new(vec![bus(1, 0.0), bus(2, 0.0)], vec![branch(1, 7, 1.0)], vec![], 1)
            .unwrap_err();
        assert_eq!(err, GridError::UnknownBus { branch: 0, bus: 7 });
    }

    #[test]
    fn rejects_islands() {
        let err = Grid::new(
            vec![bus(1, 0.0), bus(2, 0.0), bus(3, 0.0), bus(4, 0.0)],
            vec![branch(1, 2, 1.0), branch(3, 4, 1.0)],
            vec![],
            1,
        )
        .unwrap_err();
        assert_eq!(err, GridError::Islanded { components: 2 });
    }

    #[test]
    fn rejects_imbalance_and_bad_parameters() {
        let err = Grid::new(vec![bus(1, 1.0), bus(2, 0.0)], vec![branch(1, 2, 1.0)], vec![], 1)
            .unwrap_err();
        assert!(matches!(err, GridError::Unbalanced { .. }));
        let mut b = bus(2, 0.0);
        b.inertia = 0.0;
        let err = Grid::new(vec![bus(1, 0.0), b], vec![branch(1, 2, 1.0)], vec![], 1).unwrap_err();
        assert!(matches!(err, GridError::InvalidBus { id: 2, .. }));
        let err = Grid::new(vec![bus(1, 0.0), bus(2, 0.0)], vec![branch(1, 2, -1.0)], vec![], 1)
            .unwrap_err();
        assert!(matches!(err, GridError::InvalidBranch { index: 0, .. }));
    }

    #[test]
    fn rejects_bad_monitored_and_reference() {
        let err = Grid::new(vec![bus(1, 0.0), bus(2, 0.0)], vec![branch(1, 2, 1.0)], vec![3], 1)
            .unwrap_err();
        assert_eq!(err, GridError::Monitored(3));
        let err = Grid::new(vec![bus(1, 0.0), bus(2, 0.0)], vec![branch(1, 2, 1.0)], vec![], 9)
            .unwrap_err();
        assert_eq!(err, GridError::Reference(9));
    }
}
