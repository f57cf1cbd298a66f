use nalgebra::DMatrix;

use super::Grid;

/// Weighted Laplacian `Σ β̄_ij (e_i - e_j)(e_i - e_j)ᵀ` with the effective
/// branch weights used to build it.
#[derive(Debug, Clone)]
pub struct Laplacian {
    pub matrix: DMatrix<f64>,
    pub weights: Vec<f64>,
}

/// Unit scale on every branch.
pub fn nominal_scale(grid: &Grid) -> Vec<f64> {
    vec![1.0; grid.n_branches()]
}

/// Unit scale except `factor` on the faulted branch.
pub fn fault_scale(grid: &Grid, branch: usize, factor: f64) -> Vec<f64> {
    let mut s = nominal_scale(grid);
    s[branch] = factor;
    s
}

/// Builds the Laplacian with susceptances `scale[k] * β_k`.
///
/// # Panics
///
/// If `scale` has the wrong length or an entry outside `(0, 1]`.
pub fn build_laplacian(grid: &Grid, scale: &[f64]) -> Laplacian {
    assert_eq!(scale.len(), grid.n_branches(), "one scale per branch");
    let n = grid.n_buses();
    let mut matrix = DMatrix::zeros(n, n);
    let mut weights = Vec::with_capacity(scale.len());
    for (k, (br, &s)) in grid.branches().iter().zip(scale).enumerate() {
        assert!(s > 0.0 && s <= 1.0, "branch {k} scale {s} outside (0, 1]");
        let w = s * br.beta;
        let (i, j) = grid.endpoints(k);
        matrix[(i, i)] += w;
        matrix[(j, j)] += w;
        matrix[(i, j)] -= w;
        matrix[(j, i)] -= w;
        weights.push(w);
    }
    Laplacian { matrix, weights }
}
