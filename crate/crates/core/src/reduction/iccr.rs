//! Rejection of linearly dependent print components.

use nalgebra::DMatrix;

use super::linalg::eigh_desc;
use crate::error::{Error, Result};

/// Singular values at or below `s1 * ICCR_REL_THRESHOLD` are dropped.
pub const ICCR_REL_THRESHOLD: f64 = 1e-5;

/// Uncentred second-moment accumulator `Σ x xᵀ` over sample vectors.
#[derive(Debug, Clone)]
pub struct GramAccumulator {
    gram: DMatrix<f64>,
    count: usize,
}

impl GramAccumulator {
    pub fn new(dim: usize) -> Self {
        Self { gram: DMatrix::zeros(dim, dim), count: 0 }
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Adds the rows of `rows` (`n × dim`) as samples.
    pub fn add_rows(&mut self, rows: &DMatrix<f64>) {
        assert_eq!(rows.ncols(), self.dim());
        self.gram.gemm_tr(1.0, rows, rows, 1.0);
        self.count += rows.nrows();
    }

    pub fn merge(&mut self, other: &GramAccumulator) {
        self.gram += &other.gram;
        self.count += other.count;
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }
}

/// Projector onto the left singular vectors of the sample matrix whose
/// singular value exceeds `s1 * 1e-5`, from its Gram matrix `X Xᵀ`.
/// Rows of the result are orthonormal; `nrows()` is the retained rank.
pub fn fit_iccr_gram(gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = eigh_desc(gram);
    let top = values.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(Error::InsufficientData("all-zero print matrix".into()));
    }
    // singular values are square roots of the Gram eigenvalues
    let cut = top * ICCR_REL_THRESHOLD * ICCR_REL_THRESHOLD;
    let j0 = values.iter().take_while(|&&v| v > cut).count();
    Ok(vectors.columns(0, j0).transpose())
}

/// Direct form on a `dim × n` column-sample matrix.
pub fn fit_iccr(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut acc = GramAccumulator::new(x.nrows());
    acc.add_rows(&x.transpose());
    fit_iccr_gram(acc.gram())
}
