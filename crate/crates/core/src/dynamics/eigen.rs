use faer::diag::Diag;
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd;
use faer::{Mat, Par};
use nalgebra::{Complex, DMatrix, DVector};

use super::DynamicsError;

/// Largest accepted `‖V Λ V⁻¹ - A‖∞ / ‖A‖∞` before the basis is declared
/// defective.
pub const RECONSTRUCTION_TOLERANCE: f64 = 1e-8;

/// One invariant subspace of the real modal form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModalBlock {
    /// Real eigenvalue at column `start`.
    Real { start: usize, rate: f64 },
    /// Conjugate pair `re ± i·im` on columns `start, start + 1`, acting as
    /// `[[re, im], [-im, re]]` in the real basis.
    Pair { start: usize, re: f64, im: f64 },
}

impl ModalBlock {
    pub fn start(&self) -> usize {
        match *self {
            ModalBlock::Real { start, .. } | ModalBlock::Pair { start, .. } => start,
        }
    }

    pub fn size(&self) -> usize {
        match self {
            ModalBlock::Real { .. } => 1,
            ModalBlock::Pair { .. } => 2,
        }
    }

    pub fn real_part(&self) -> f64 {
        match *self {
            ModalBlock::Real { rate, .. } => rate,
            ModalBlock::Pair { re, .. } => re,
        }
    }
}

/// Real block-diagonal decomposition `A = V B V⁻¹`.
#[derive(Debug, Clone)]
pub struct ModalForm {
    vectors: DMatrix<f64>,
    inverse: DMatrix<f64>,
    blocks: Vec<ModalBlock>,
}

/// Per-block factors of `exp(B t)` for one fixed `t`.
#[derive(Debug, Clone)]
pub struct BlockExp(Vec<[f64; 3]>);

impl ModalForm {
    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn blocks(&self) -> &[ModalBlock] {
        &self.blocks
    }

    pub fn max_real_part(&self) -> f64 {
        self.blocks.iter().map(ModalBlock::real_part).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn exp_factors(&self, t: f64) -> BlockExp {
        BlockExp(
            self.blocks
                .iter()
                .map(|b| match *b {
                    ModalBlock::Real { rate, .. } => [(rate * t).exp(), 1.0, 0.0],
                    ModalBlock::Pair { re, im, .. } => {
                        let (s, c) = (im * t).sin_cos();
                        [(re * t).exp(), c, s]
                    }
                })
                .collect(),
        )
    }

    /// `coords ← exp(B t) coords` with precomputed factors.
    pub fn apply_exp(&self, factors: &BlockExp, coords: &mut [f64]) {
        for (b, f) in self.blocks.iter().zip(&factors.0) {
            let [e, c, s] = *f;
            match *b {
                ModalBlock::Real { start, .. } => coords[start] *= e,
                ModalBlock::Pair { start, .. } => {
                    let (x, y) = (coords[start], coords[start + 1]);
                    coords[start] = e * (c * x + s * y);
                    coords[start + 1] = e * (c * y - s * x);
                }
            }
        }
    }

    pub fn to_coords(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.inverse * x
    }

    pub fn to_state(&self, coords: &DVector<f64>) -> DVector<f64> {
        &self.vectors * coords
    }
}

/// Complex eigendecomposition `A = U Λ U⁻¹`, columns sorted by decreasing
/// real part with conjugate pairs adjacent.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub eigenvalues: DVector<Complex<f64>>,
    pub vectors: DMatrix<Complex<f64>>,
    pub inverse: DMatrix<Complex<f64>>,
    pub residual: f64,
    modal: ModalForm,
}

impl Eigensystem {
    pub fn modal(&self) -> &ModalForm {
        &self.modal
    }

    pub fn into_modal(self) -> ModalForm {
        self.modal
    }
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn eigendecompose(a: &DMatrix<f64>) -> Result<Eigensystem, DynamicsError> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(DynamicsError::Contract("eigendecomposition needs a square matrix".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::Eigen("matrix has non-finite entries".into()));
    }
    let fa = Mat::<f64>::from_fn(n, n, |i, j| a[(i, j)]);
    let par = Par::Seq;
    let mut u = Mat::<f64>::zeros(n, n);
    let mut re = Diag::<f64>::zeros(n);
    let mut im = Diag::<f64>::zeros(n);
    let mut mem = MemBuffer::new(evd::evd_scratch::<f64>(
        n,
        evd::ComputeEigenvectors::No,
        evd::ComputeEigenvectors::Yes,
        par,
        Default::default(),
    ));
    evd::evd_real(
        fa.as_ref(),
        re.as_mut(),
        im.as_mut(),
        None,
        Some(u.as_mut()),
        par,
        MemStack::new(&mut mem),
        Default::default(),
    )
    .map_err(|e| DynamicsError::Eigen(format!("{e:?}")))?;

    // Group raw columns into blocks, then order by decreasing real part.
    let mut raw = Vec::new();
    let mut k = 0;
    while k < n {
        let (r, i) = (re[k], im[k]);
        if i != 0.0 && k + 1 < n {
            raw.push((k, ModalBlock::Pair { start: 0, re: r, im: i }));
            k += 2;
        } else {
            raw.push((k, ModalBlock::Real { start: 0, rate: r }));
            k += 1;
        }
    }
    raw.sort_by(|x, y| {
        y.1.real_part()
            .total_cmp(&x.1.real_part())
            .then(x.0.cmp(&y.0))
    });

    let mut vectors = DMatrix::zeros(n, n);
    let mut blocks = Vec::with_capacity(raw.len());
    let mut col = 0;
    for (src, block) in raw {
        for c in 0..block.size() {
            let norm = (0..n).map(|r| u[(r, src)].powi(2) + if block.size() == 2 { u[(r, src + 1)].powi(2) } else { 0.0 }).sum::<f64>().sqrt();
            let s = if norm > 0.0 { 1.0 / norm } else { 1.0 };
            for r in 0..n {
                vectors[(r, col + c)] = u[(r, src + c)] * s;
            }
        }
        blocks.push(match block {
            ModalBlock::Real { rate, .. } => ModalBlock::Real { start: col, rate },
            ModalBlock::Pair { re, im, .. } => ModalBlock::Pair { start: col, re, im },
        });
        col += block.size();
    }
    let inverse = vectors
        .clone()
        .try_inverse()
        .ok_or(DynamicsError::Defective { residual: f64::INFINITY })?;

    let mut bmat = DMatrix::zeros(n, n);
    for b in &blocks {
        match *b {
            ModalBlock::Real { start, rate } => bmat[(start, start)] = rate,
            ModalBlock::Pair { start, re, im } => {
                bmat[(start, start)] = re;
                bmat[(start + 1, start + 1)] = re;
                bmat[(start, start + 1)] = im;
                bmat[(start + 1, start)] = -im;
            }
        }
    }
    let recon = &vectors * bmat * &inverse;
    let scale = inf_norm(a).max(f64::MIN_POSITIVE);
    let residual = inf_norm(&(recon - a)) / scale;
    if !(residual <= RECONSTRUCTION_TOLERANCE) {
        return Err(DynamicsError::Defective { residual });
    }

    let mut eigenvalues = DVector::from_element(n, Complex::new(0.0, 0.0));
    let mut cvec = DMatrix::from_element(n, n, Complex::new(0.0, 0.0));
    let mut cinv = DMatrix::from_element(n, n, Complex::new(0.0, 0.0));
    for b in &blocks {
        match *b {
            ModalBlock::Real { start, rate } => {
                eigenvalues[start] = Complex::new(rate, 0.0);
                for r in 0..n {
                    cvec[(r, start)] = Complex::new(vectors[(r, start)], 0.0);
                    cinv[(start, r)] = Complex::new(inverse[(start, r)], 0.0);
                }
            }
            ModalBlock::Pair { start, re, im } => {
                // u = v_r + i v_i carries re + i·im; the conjugate follows.
                eigenvalues[start] = Complex::new(re, im);
                eigenvalues[start + 1] = Complex::new(re, -im);
                for r in 0..n {
                    let (vr, vi) = (vectors[(r, start)], vectors[(r, start + 1)]);
                    cvec[(r, start)] = Complex::new(vr, vi);
                    cvec[(r, start + 1)] = Complex::new(vr, -vi);
                    let (w1, w2) = (inverse[(start, r)], inverse[(start + 1, r)]);
                    cinv[(start, r)] = Complex::new(0.5 * w1, -0.5 * w2);
                    cinv[(start + 1, r)] = Complex::new(0.5 * w1, 0.5 * w2);
                }
            }
        }
    }

    Ok(Eigensystem {
        eigenvalues,
        vectors: cvec,
        inverse: cinv,
        residual,
        modal: ModalForm { vectors, inverse, blocks },
    })
}
