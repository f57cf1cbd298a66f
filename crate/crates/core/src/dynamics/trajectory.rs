use std::io::{self, Read, Write};

use nalgebra::{Const, DMatrix, DVectorView, Dyn};

use super::DynamicsError;

const BINARY_MAGIC: &[u8; 8] = b"DSTRAJ01";

/// Number of steps `K = T / dt`; the horizon must be a whole number of steps.
pub fn horizon_steps(horizon: f64, dt: f64) -> Result<usize, DynamicsError> {
    if !(dt > 0.0 && horizon > 0.0 && dt.is_finite() && horizon.is_finite()) {
        return Err(DynamicsError::Contract(format!(
            "horizon {horizon} and step {dt} must be positive"
        )));
    }
    let k = (horizon / dt).round();
    if (k * dt - horizon).abs() > 1e-9 * horizon.max(1.0) || k < 1.0 {
        return Err(DynamicsError::Contract(format!(
            "horizon {horizon} is not a multiple of the step {dt}"
        )));
    }
    Ok(k as usize)
}

/// Grid index at which a fault of length `duration` is cleared, clamped to
/// the horizon.
pub fn snap_steps(duration: f64, dt: f64, total: usize) -> usize {
    let k = (duration / dt).round();
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(total)
    }
}

/// Sampled states `x(t_k)`, `t_k = k dt`, `k = 0..=K`, one column per time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub n_buses: usize,
    pub states: DMatrix<f64>,
    pub faulted_branch: Option<usize>,
    /// Number of fault-on steps `k_τ`; the fault is on for `t_k < k_τ dt`.
    pub fault_steps: usize,
    pub duration: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    pub fn steps(&self) -> usize {
        self.len().saturating_sub(1)
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn angles(&self, k: usize) -> DVectorView<'_, f64> {
        self.states.generic_view((self.n_buses, k), (Dyn(self.n_buses), Const::<1>))
    }

    pub fn frequencies(&self, k: usize) -> DVectorView<'_, f64> {
        self.states.generic_view((0, k), (Dyn(self.n_buses), Const::<1>))
    }

    pub fn angle(&self, bus: usize, k: usize) -> f64 {
        self.states[(self.n_buses + bus, k)]
    }

    /// Writes `t, theta_1..theta_n, omega_1..omega_n` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.n_buses;
        let mut header = String::from("t");
        for b in 1..=n {
            header.push_str(&format!(",theta_{b}"));
        }
        for b in 1..=n {
            header.push_str(&format!(",omega_{b}"));
        }
        writeln!(w, "{header}")?;
        for k in 0..self.len() {
            let mut line = format!("{}", self.time(k));
            for r in (n..2 * n).chain(0..n) {
                line.push(',');
                line.push_str(&self.states[(r, k)].to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Columnar little-endian dump: magic, bus count, sample count, `dt`,
    /// then the time column followed by every angle and frequency column.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.n_buses;
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(n as u64).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        for k in 0..self.len() {
            w.write_all(&self.time(k).to_le_bytes())?;
        }
        for r in (n..2 * n).chain(0..n) {
            for k in 0..self.len() {
                w.write_all(&self.states[(r, k)].to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a binary dump back into `(dt, states)`; scenario metadata is
    /// not part of the format.
    pub fn read_binary<R: Read>(mut r: R) -> Result<(f64, DMatrix<f64>), DynamicsError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(DynamicsError::Contract("not a trajectory dump".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> io::Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let len = u64::from_le_bytes(next(&mut r)?) as usize;
        let dt = f64::from_le_bytes(next(&mut r)?);
        for _ in 0..len {
            next(&mut r)?;
        }
        let mut states = DMatrix::zeros(2 * n, len);
        for row in (n..2 * n).chain(0..n) {
            for k in 0..len {
                states[(row, k)] = f64::from_le_bytes(next(&mut r)?);
            }
        }
        Ok((dt, states))
    }
}
