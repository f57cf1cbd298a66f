use nalgebra::{DMatrix, DVector};

use super::{build_laplacian, Grid, GridError};

/// Relative tolerance on `|Σ p| / max(1, Σ |p|)` for a balanced grid.
pub const BALANCE_TOLERANCE: f64 = 1e-9;

/// Pre-fault angles solving `L θ = p` with the reference bus pinned at zero.
pub fn equilibrium_angles(grid: &Grid, scale: &[f64]) -> Result<DVector<f64>, GridError> {
    let lap = build_laplacian(grid, scale);
    let p = DVector::from_vec(grid.injections());
    solve_pinned(&lap.matrix, &p, grid.reference_index())
}

/// Solves a connected-Laplacian system with one coordinate fixed at zero.
///
/// The reduced matrix is symmetric positive definite, so a Cholesky factor
/// is used; failure means the network is disconnected.
pub fn solve_pinned(
    laplacian: &DMatrix<f64>,
    rhs: &DVector<f64>,
    pinned: usize,
) -> Result<DVector<f64>, GridError> {
    let n = laplacian.nrows();
    let total: f64 = rhs.iter().sum();
    let scale = rhs.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    if total.abs() > BALANCE_TOLERANCE * scale {
        return Err(GridError::Unbalanced { imbalance: total });
    }
    if n == 1 {
        return Ok(DVector::zeros(1));
    }
    let reduced = laplacian.clone().remove_row(pinned).remove_column(pinned);
    let b = rhs.clone().remove_row(pinned);
    let chol = reduced
        .cholesky()
        .ok_or(GridError::Islanded { components: 2 })?;
    let x = chol.solve(&b);
    let mut out = DVector::zeros(n);
    for (k, v) in x.iter().enumerate() {
        out[if k < pinned { k } else { k + 1 }] = *v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::tests::{branch, bus, triangle};
    use crate::grid::{fault_scale, nominal_scale};
    use proptest::prelude::*;

    #[test]
    fn triangle_residual_and_pin() {
        let g = triangle();
        let s = nominal_scale(&g);
        let theta = equilibrium_angles(&g, &s).unwrap();
        assert_eq!(theta[0], 0.0);
        let l = build_laplacian(&g, &s).matrix;
        let r = &l * &theta - DVector::from_vec(g.injections());
        assert!(r.amax() < 1e-12);
    }

    #[test]
    fn two_bus_closed_form() {
        let g = Grid::new(vec![bus(1, 0.5), bus(2, -0.5)], vec![branch(1, 2, 4.0)], vec![0], 1)
            .unwrap();
        let theta = equilibrium_angles(&g, &nominal_scale(&g)).unwrap();
        assert!((theta[1] + 0.125).abs() < 1e-15);
        let flows = g.flows(theta.as_slice());
        assert!((flows[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn zero_injection_gives_zero_angles() {
        let g = Grid::new(vec![bus(1, 0.0), bus(2, 0.0)], vec![branch(1, 2, 4.0)], vec![], 2)
            .unwrap();
        let theta = equilibrium_angles(&g, &nominal_scale(&g)).unwrap();
        assert_eq!(theta.amax(), 0.0);
    }

    #[test]
    fn unbalanced_rhs_is_rejected() {
        let g = triangle();
        let l = build_laplacian(&g, &nominal_scale(&g)).matrix;
        let err = solve_pinned(&l, &DVector::from_vec(vec![1.0, 0.0, 0.0]), 0).unwrap_err();
        assert!(matches!(err, GridError::Unbalanced { .. }));
    }

    proptest! {
        #[test]
        fn residual_small_for_random_rings(
            betas in proptest::collection::vec(0.5f64..50.0, 4..9),
            raw in proptest::collection::vec(-1.0f64..1.0, 4..9),
            faulted in 0usize..4,
        ) {
            let n = betas.len().min(raw.len());
            let mean = raw[..n].iter().sum::<f64>() / n as f64;
            let buses: Vec<_> = (0..n).map(|k| bus(k as u32 + 1, raw[k] - mean)).collect();
            let branches: Vec<_> = (0..n)
                .map(|k| branch(k as u32 + 1, ((k + 1) % n) as u32 + 1, betas[k]))
                .collect();
            let g = Grid::new(buses, branches, vec![], 1).unwrap();
            let s = fault_scale(&g, faulted % n, 2.0 / 3.0);
            let theta = equilibrium_angles(&g, &s).unwrap();
            let l = build_laplacian(&g, &s).matrix;
            let r = &l * &theta - DVector::from_vec(g.injections());
            prop_assert!(r.amax() < 1e-10);
            prop_assert_eq!(theta[0], 0.0);
        }
    }
}
