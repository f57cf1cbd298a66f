//! Reader for MATPOWER version-2 case files (`mpc.bus`, `mpc.gen`,
//! `mpc.branch`, `mpc.baseMVA`). Other fields are skipped.

use serde::{Deserialize, Serialize};

use super::{equilibrium_angles, fault_scale, nominal_scale, Branch, Bus, BusKind, Grid, GridError};
use crate::FAULT_SUSCEPTANCE_FACTOR;

/// Parameters that a steady-state case file does not carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseDefaults {
    /// Machine inertia in pu·s² on the machine's own MVA base.
    pub machine_inertia: f64,
    /// Machine damping in pu·s on the machine's own MVA base.
    pub machine_damping: f64,
    /// Inertia of non-machine buses as a fraction of the median machine inertia.
    pub load_inertia_fraction: f64,
    /// Derived limits are `margin * max(envelope, floor)`, where the
    /// envelope is the largest steady flow over the pre-fault state and,
    /// when `secure_envelope` is set, every single-branch fault-on state.
    pub limit_margin: f64,
    pub secure_envelope: bool,
    /// Lower bound on the flow used for derived limits, in pu.
    pub limit_floor: f64,
    /// Ratings at or above this value (MVA) are treated as unrated.
    pub unrated_threshold_mva: f64,
}

impl Default for CaseDefaults {
    fn default() -> Self {
        Self {
            machine_inertia: 1.0,
            machine_damping: 5.0,
            load_inertia_fraction: 0.1,
            limit_margin: 1.05,
            secure_envelope: true,
            limit_floor: 0.3,
            unrated_threshold_mva: 9900.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Row {
    line: usize,
    values: Vec<f64>,
}

/// Raw numeric tables of a case file.
#[derive(Debug, Clone)]
pub struct MatpowerCase {
    pub base_mva: f64,
    bus: Vec<Row>,
    gen: Vec<Row>,
    branch: Vec<Row>,
}

enum State {
    Idle,
    Matrix { name: String, opened: usize, rows: Vec<Row> },
    Skip { closer: char, opened: usize },
}

pub fn parse_matpower_case(text: &str) -> Result<MatpowerCase, GridError> {
    let mut base_mva = None;
    let mut tables: Vec<(String, usize, Vec<Row>)> = Vec::new();
    let mut state = State::Idle;
    let mut last_line = 0;

    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        last_line = line;
        let code = raw.split('%').next().unwrap_or("").trim();
        if code.is_empty() {
            continue;
        }
        state = match state {
            State::Idle => {
                let Some(rest) = code.strip_prefix("mpc.") else {
                    continue;
                };
                let Some((name, value)) = rest.split_once('=') else {
                    return Err(parse_err(line, format!("expected assignment, found `{code}`")));
                };
                let name = name.trim().to_owned();
                let value = value.trim();
                if let Some(body) = value.strip_prefix('[') {
                    let mut rows = Vec::new();
                    if read_matrix_text(body, line, &mut rows)? {
                        tables.push((name, line, rows));
                        State::Idle
                    } else {
                        State::Matrix { name, opened: line, rows }
                    }
                } else if value.starts_with('{') {
                    if value.contains('}') {
                        State::Idle
                    } else {
                        State::Skip { closer: '}', opened: line }
                    }
                } else {
                    if name == "baseMVA" {
                        let v = value.trim_end_matches(';').trim();
                        base_mva = Some(v.parse::<f64>().map_err(|_| {
                            parse_err(line, format!("baseMVA `{v}` is not a number"))
                        })?);
                    }
                    State::Idle
                }
            }
            State::Matrix { name, opened, mut rows } => {
                if read_matrix_text(code, line, &mut rows)? {
                    tables.push((name, opened, rows));
                    State::Idle
                } else {
                    State::Matrix { name, opened, rows }
                }
            }
            State::Skip { closer, opened } => {
                if code.contains(closer) {
                    State::Idle
                } else {
                    State::Skip { closer, opened }
                }
            }
        };
    }
    match state {
        State::Matrix { name, opened, .. } => {
            return Err(parse_err(
                last_line,
                format!("matrix `{name}` opened at line {opened} is never closed"),
            ))
        }
        State::Skip { opened, .. } => {
            return Err(parse_err(last_line, format!("block opened at line {opened} is never closed")))
        }
        State::Idle => {}
    }

    let mut take = |name: &str, min_cols: usize| -> Result<Vec<Row>, GridError> {
        let pos = tables
            .iter()
            .position(|(n, _, _)| n == name)
            .ok_or_else(|| parse_err(last_line, format!("missing section `mpc.{name}`")))?;
        let (_, _, rows) = tables.swap_remove(pos);
        for r in &rows {
            if r.values.len() < min_cols {
                return Err(parse_err(
                    r.line,
                    format!("`{name}` row has {} columns, expected at least {min_cols}", r.values.len()),
                ));
            }
        }
        Ok(rows)
    };
    let bus = take("bus", 13)?;
    let gen = take("gen", 10)?;
    let branch = take("branch", 11)?;
    let base_mva = base_mva.ok_or_else(|| parse_err(last_line, "missing `mpc.baseMVA`".into()))?;
    if !(base_mva > 0.0) {
        return Err(parse_err(last_line, "baseMVA must be positive".into()));
    }
    Ok(MatpowerCase { base_mva, bus, gen, branch })
}

// Appends the rows found in `text`; returns true once the closing `]` is seen.
fn read_matrix_text(text: &str, line: usize, rows: &mut Vec<Row>) -> Result<bool, GridError> {
    let (body, closed) = match text.find(']') {
        Some(p) => (&text[..p], true),
        None => (text, false),
    };
    for segment in body.split(';') {
        let values = segment
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_err(line, format!("`{t}` is not a number")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if !values.is_empty() {
            rows.push(Row { line, values });
        }
    }
    Ok(closed)
}

fn parse_err(line: usize, message: String) -> GridError {
    GridError::Parse { line, message }
}

fn bus_id(v: f64, line: usize) -> Result<u32, GridError> {
    if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
        return Err(parse_err(line, format!("bus id {v} is not a non-negative integer")));
    }
    Ok(v as u32)
}

impl MatpowerCase {
    pub fn n_bus_rows(&self) -> usize {
        self.bus.len()
    }

    pub fn n_branch_rows(&self) -> usize {
        self.branch.len()
    }

    /// Converts the tables into a validated grid monitoring every branch.
    ///
    /// Net injections are `Pg - Pd` per bus; the reference (type 3) bus then
    /// absorbs the residual so that the lossless model is balanced.
    /// Out-of-service generators and branches are dropped.
    pub fn to_grid(&self, defaults: &CaseDefaults) -> Result<Grid, GridError> {
        let base = self.base_mva;
        let mut ids = Vec::with_capacity(self.bus.len());
        let mut reference = None;
        for r in &self.bus {
            let id = bus_id(r.values[0], r.line)?;
            if r.values[1] == 3.0 && reference.is_none() {
                reference = Some(id);
            }
            ids.push(id);
        }
        let pos = |id: u32| ids.iter().position(|&x| x == id);

        let n = ids.len();
        let mut injection: Vec<f64> = self.bus.iter().map(|r| -r.values[2] / base).collect();
        let demand: Vec<f64> = self.bus.iter().map(|r| r.values[2] / base).collect();
        let mut machine_m = vec![0.0; n];
        let mut machine_d = vec![0.0; n];
        let mut producing = vec![false; n];
        let mut has_machine = vec![false; n];
        for r in &self.gen {
            if r.values[7] <= 0.0 {
                continue;
            }
            let id = bus_id(r.values[0], r.line)?;
            let k = pos(id)
                .ok_or_else(|| parse_err(r.line, format!("generator at unknown bus {id}")))?;
            let mbase = if r.values[6] > 0.0 { r.values[6] } else { base };
            injection[k] += r.values[1] / base;
            machine_m[k] += defaults.machine_inertia * mbase / base;
            machine_d[k] += defaults.machine_damping * mbase / base;
            has_machine[k] = true;
            producing[k] |= r.values[1] > 0.0;
        }
        let reference = reference
            .or_else(|| has_machine.iter().position(|&h| h).map(|k| ids[k]))
            .unwrap_or(ids[0]);
        let r_idx = pos(reference).expect("reference is a bus");
        let residual: f64 = injection.iter().sum();
        injection[r_idx] -= residual;

        let median = |v: Vec<f64>| -> f64 {
            let mut v = v;
            if v.is_empty() {
                return 1.0;
            }
            v.sort_by(f64::total_cmp);
            let m = v.len() / 2;
            if v.len() % 2 == 1 {
                v[m]
            } else {
                0.5 * (v[m - 1] + v[m])
            }
        };
        let med_m = median((0..n).filter(|&k| has_machine[k]).map(|k| machine_m[k]).collect());
        let med_d = median((0..n).filter(|&k| has_machine[k]).map(|k| machine_d[k]).collect());

        let buses: Vec<Bus> = (0..n)
            .map(|k| Bus {
                id: ids[k],
                inertia: if has_machine[k] { machine_m[k] } else { defaults.load_inertia_fraction * med_m },
                damping: if has_machine[k] { machine_d[k] } else { med_d },
                injection: injection[k],
                kind: match (has_machine[k], producing[k]) {
                    (true, true) => BusKind::Generator,
                    (true, false) => BusKind::Condenser,
                    _ => BusKind::Load,
                },
                demand: demand[k],
            })
            .collect();

        let mut branches = Vec::new();
        let mut ratings = Vec::new();
        for r in &self.branch {
            if r.values[10] <= 0.0 {
                continue;
            }
            let from = bus_id(r.values[0], r.line)?;
            let to = bus_id(r.values[1], r.line)?;
            let x = r.values[3];
            let tap = if r.values[8] == 0.0 { 1.0 } else { r.values[8] };
            if x * tap <= 0.0 {
                return Err(parse_err(r.line, format!("reactance {x} gives no positive susceptance")));
            }
            let transformer = r.values[8] != 0.0 || r.values[9] != 0.0;
            branches.push(Branch { from, to, beta: 1.0 / (x * tap), limit: 1.0, transformer });
            let rate = r.values[5];
            ratings.push((rate > 0.0 && rate < defaults.unrated_threshold_mva).then(|| rate / base));
        }

        let provisional = Grid::new(buses.clone(), branches.clone(), vec![], reference)?;
        let envelope = if ratings.iter().all(Option::is_some) {
            vec![0.0; branches.len()]
        } else {
            steady_flow_envelope(&provisional, defaults.secure_envelope)?
        };
        for ((br, rating), f) in branches.iter_mut().zip(ratings).zip(envelope) {
            br.limit = rating.unwrap_or_else(|| defaults.limit_margin * f.max(defaults.limit_floor));
        }
        Ok(Grid::new(buses, branches, vec![], reference)?.monitor_all())
    }
}

/// Largest steady `|flow|` per branch over the pre-fault equilibrium and,
/// if `with_faults`, the fault-on equilibrium of every single-branch fault.
pub fn steady_flow_envelope(grid: &Grid, with_faults: bool) -> Result<Vec<f64>, GridError> {
    let theta = equilibrium_angles(grid, &nominal_scale(grid))?;
    let mut env: Vec<f64> = grid.flows(theta.as_slice()).iter().map(|f| f.abs()).collect();
    if with_faults {
        for b in 0..grid.n_branches() {
            let scale = fault_scale(grid, b, FAULT_SUSCEPTANCE_FACTOR);
            let theta = equilibrium_angles(grid, &scale)?;
            for (k, f) in grid.flows(theta.as_slice()).iter().enumerate() {
                let f = if k == b { f * FAULT_SUSCEPTANCE_FACTOR } else { *f };
                env[k] = env[k].max(f.abs());
            }
        }
    }
    Ok(env)
}
