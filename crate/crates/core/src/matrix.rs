//! Small dense symmetric-matrix utilities.
//!
//! Matrices in this crate are tiny (state and control dimensions of a few
//! units), so everything is built on `nalgebra::DMatrix` and plain symmetric
//! eigen-decompositions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance for the "is positive semidefinite" relation.
pub const DEFAULT_PSD_TOL: f64 = 1e-9;
/// Default uniform-positivity margin for the "uniformly positive definite" relation.
pub const DEFAULT_PD_DELTA: f64 = 1e-6;

/// A real symmetric matrix with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Builds a symmetric matrix from `m` by averaging it with its transpose.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidMatrix(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entry".into()));
        }
        let s = symmetrize(&m);
        debug_assert!(is_exactly_symmetric(&s));
        Ok(SymMatrix(s))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        smallest_eigenvalue(&self.0)
    }
}

impl TryFrom<DMatrix<f64>> for SymMatrix {
    type Error = Error;

    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        SymMatrix::new(m)
    }
}

impl From<SymMatrix> for DMatrix<f64> {
    fn from(s: SymMatrix) -> Self {
        s.0
    }
}

/// `(M + M^T) / 2`. The result is exactly symmetric in floating point.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

pub fn is_exactly_symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)]))
}

/// Largest absolute entry (max-entry norm).
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        0 => f64::INFINITY,
        1 => m[(0, 0)],
        _ => m.clone().symmetric_eigenvalues().min(),
    }
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::InvalidMatrix(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }
    Ok(smallest_eigenvalue(&symmetrize(m)))
}

/// `M >= -tol I`.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> Result<bool> {
    Ok(min_eigenvalue(m)? >= -tol)
}

/// `M(t_k) - delta I >= 0` at every grid point.
pub fn is_uniformly_pd(grid: &[DMatrix<f64>], delta: f64) -> Result<bool> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut worst = f64::INFINITY;
    for m in grid {
        worst = worst.min(min_eigenvalue(m)?);
    }
    Ok(worst - delta >= 0.0)
}

/// Result of the two equivalent Schur-complement positivity tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchurFlags {
    /// `A - C B^{-1} C^T >= -tol I`
    pub via_complement: bool,
    /// `[[A, C], [C^T, B]] >= -tol I`
    pub via_block: bool,
}

/// Evaluates both sides of the Schur-complement equivalence for `B > 0`.
pub fn schur_psd(a: &DMatrix<f64>, c: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Result<SchurFlags> {
    let (n, m) = (a.nrows(), b.nrows());
    if !a.is_square() || !b.is_square() || c.nrows() != n || c.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "schur test needs A {n}x{n}, C {n}x{m}, B {m}x{m}; got A {}x{}, C {}x{}, B {}x{}",
            a.nrows(),
            a.ncols(),
            c.nrows(),
            c.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let b_min = min_eigenvalue(b)?;
    if b_min <= tol {
        return Err(Error::IndefiniteB { min_eig: b_min });
    }
    let b_sym = symmetrize(b);
    let chol = b_sym.clone().cholesky().ok_or(Error::IndefiniteB { min_eig: b_min })?;
    let complement = a - c * chol.solve(&c.transpose());
    let via_complement = min_eigenvalue(&complement)? >= -tol;

    let mut block = DMatrix::zeros(n + m, n + m);
    block.view_mut((0, 0), (n, n)).copy_from(a);
    block.view_mut((0, n), (n, m)).copy_from(c);
    block.view_mut((n, 0), (m, n)).copy_from(&c.transpose());
    block.view_mut((n, n), (m, m)).copy_from(&b_sym);
    let via_block = min_eigenvalue(&block)? >= -tol;

    Ok(SchurFlags {
        via_complement,
        via_block,
    })
}

/// `diag(a, b)` with zero off-diagonal blocks.
pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

/// The block-diagonal weight quadruple pairing the deviation weights with
/// the mean weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockQuadruple {
    /// `diag(Q, Q_hat)`, size `2n`.
    pub q: DMatrix<f64>,
    /// `diag(S, S_hat)`, size `2n x 2m`.
    pub s: DMatrix<f64>,
    /// `diag(R, R_hat)`, size `2m`.
    pub r: DMatrix<f64>,
    /// `diag(G, G_hat)`, size `2n`.
    pub g: DMatrix<f64>,
}

impl BlockQuadruple {
    #[allow(clippy::too_many_arguments)]
    pub fn from_blocks(
        q: &DMatrix<f64>,
        q_hat: &DMatrix<f64>,
        s: &DMatrix<f64>,
        s_hat: &DMatrix<f64>,
        r: &DMatrix<f64>,
        r_hat: &DMatrix<f64>,
        g: &DMatrix<f64>,
        g_hat: &DMatrix<f64>,
    ) -> Self {
        BlockQuadruple {
            q: symmetrize(&block_diag(q, q_hat)),
            s: block_diag(s, s_hat),
            r: symmetrize(&block_diag(r, r_hat)),
            g: symmetrize(&block_diag(g, g_hat)),
        }
    }

    /// The joint matrix `[[Q, S], [S^T, R]]`.
    pub fn joint(&self) -> DMatrix<f64> {
        let (n2, m2) = (self.q.nrows(), self.r.nrows());
        let mut out = DMatrix::zeros(n2 + m2, n2 + m2);
        out.view_mut((0, 0), (n2, n2)).copy_from(&self.q);
        out.view_mut((0, n2), (n2, m2)).copy_from(&self.s);
        out.view_mut((n2, 0), (m2, n2)).copy_from(&self.s.transpose());
        out.view_mut((n2, n2), (m2, m2)).copy_from(&self.r);
        out
    }
}
