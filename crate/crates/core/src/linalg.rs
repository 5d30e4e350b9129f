//! Dense helpers shared by the expectation-value routines.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{GbbmError, Result};

/// Quadrature indices `(x_A…, p_A…)` of a mode subset inside a `2d` vector.
pub(crate) fn quadrature_indices(modes: usize, subset: &[usize]) -> Vec<usize> {
    subset
        .iter()
        .copied()
        .chain(subset.iter().map(|&m| m + modes))
        .collect()
}

pub(crate) fn select_vector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

pub(crate) fn select_matrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let n = idx.len();
    DMatrix::from_fn(n, n, |r, c| m[(idx[r], idx[c])])
}

/// Factorized form `exp(-scale · μᵀ M⁻¹ μ) / sqrt(det M)` for a symmetric
/// positive-definite `M`, evaluated in the log domain.
pub(crate) struct GaussianOverlap {
    chol: Cholesky<f64, Dyn>,
    /// `M⁻¹ μ`
    pub solved: DVector<f64>,
    pub value: f64,
}

impl GaussianOverlap {
    pub fn new(matrix: DMatrix<f64>, mean: &DVector<f64>, scale: f64) -> Result<Self> {
        let chol = Cholesky::new(matrix).ok_or_else(|| {
            GbbmError::InvalidState("reduced covariance is not positive definite".into())
        })?;
        let l = chol.l_dirty();
        let log_det: f64 = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
        let solved = chol.solve(mean);
        let quad = mean.dot(&solved);
        let value = (-scale * quad - 0.5 * log_det).exp();
        Ok(Self { chol, solved, value })
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}
