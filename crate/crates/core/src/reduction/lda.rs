//! Linear discriminant analysis on accumulated scatter.

use nalgebra::DMatrix;

use super::linalg::{generalized_eigh, symmetrize, trace};
use super::scatter::Scatter;
use crate::error::{invalid, Result};

/// Relative shrinkage `λ = LDA_SHRINK * tr(T) / dim` added to `T` when data is scarce.
pub const LDA_SHRINK: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct LdaFit {
    /// `K × dim`, rows are discriminant directions.
    pub projection: DMatrix<f64>,
    /// Eigenvalues of `T⁻¹B`, non-increasing (first K kept).
    pub eigenvalues: Vec<f64>,
    pub shrinkage: f64,
}

/// Top-`k` eigenvectors of `T⁻¹B`. `T` is shrunk towards a scaled identity
/// when `n < 10 * dim`, or when it is not positive definite.
pub fn fit_lda(scatter: &Scatter, k: usize) -> Result<LdaFit> {
    let dim = scatter.total.nrows();
    if k >= scatter.classes {
        return Err(invalid(format!("K < C violated: K = {k}, C = {}", scatter.classes)));
    }
    if k > dim {
        return Err(invalid(format!("K = {k} exceeds dimension {dim}")));
    }
    let mut t = symmetrize(&scatter.total);
    let mut shrinkage = 0.0;
    if scatter.n < 10 * dim {
        shrinkage = LDA_SHRINK * trace(&t) / dim as f64;
        for i in 0..dim {
            t[(i, i)] += shrinkage;
        }
    }
    let (values, g, ridge) = generalized_eigh(&scatter.between, &t, LDA_SHRINK)?;
    shrinkage += ridge;
    Ok(LdaFit {
        projection: g.columns(0, k).transpose(),
        eigenvalues: values.into_iter().take(k).collect(),
        shrinkage,
    })
}
