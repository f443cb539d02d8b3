//! Small dense helpers shared by the reduction stages.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing order. Column `i` of the returned matrix pairs with value `i`.
pub fn eigh_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        canonical_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Flips `v` so that its largest-magnitude entry (first on ties) is positive.
pub fn canonical_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.len() > 0 && v[best] < 0.0 {
        v.neg_mut();
    }
}

pub fn trace(m: &DMatrix<f64>) -> f64 {
    m.diagonal().sum()
}

/// Lower Cholesky factor; on failure retries once with `shrink * tr/n * I`
/// added. Returns the factor and the ridge actually applied.
pub fn cholesky_with_ridge(m: &DMatrix<f64>, shrink: f64) -> Result<(DMatrix<f64>, f64)> {
    let sym = symmetrize(m);
    if let Some(c) = sym.clone().cholesky() {
        return Ok((c.l(), 0.0));
    }
    let n = sym.nrows();
    let lambda = shrink * trace(&sym).abs().max(f64::MIN_POSITIVE) / n as f64;
    let reg = &sym + DMatrix::identity(n, n) * lambda;
    reg.cholesky()
        .map(|c| (c.l(), lambda))
        .ok_or_else(|| Error::LinAlg("matrix is not positive definite even after regularisation".into()))
}

/// Solves `L X = B` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b).expect("triangular factor has a zero pivot")
}

/// Solves `Lᵀ X = B` for lower-triangular `L`.
pub fn solve_lower_transposed(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.tr_solve_lower_triangular(b).expect("triangular factor has a zero pivot")
}

/// Top generalised eigenpairs of `a g = λ c g` via `c = L Lᵀ`. Returned
/// vectors are the columns of `L⁻ᵀ V` (c-orthonormal).
pub fn generalized_eigh(a: &DMatrix<f64>, c: &DMatrix<f64>, shrink: f64) -> Result<(Vec<f64>, DMatrix<f64>, f64)> {
    let (l, ridge) = cholesky_with_ridge(c, shrink)?;
    let tmp = solve_lower(&l, a);
    let m = solve_lower(&l, &tmp.transpose());
    let (values, v) = eigh_desc(&m);
    let g = solve_lower_transposed(&l, &v);
    Ok((values, g, ridge))
}

/// Row means of a `dim × n` column-sample matrix.
pub fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    x.column_mean()
}

/// Unbiased covariance of the columns of `x`.
pub fn covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols();
    let mean = x.column_mean();
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        col -= &mean;
    }
    (&c * c.transpose()) / (n.max(2) - 1) as f64
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigh_sorted_and_reconstructs() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0]);
        let (vals, vecs) = eigh_desc(&m);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        let d = DMatrix::from_diagonal(&DVector::from_vec(vals));
        let rec = &vecs * d * vecs.transpose();
        assert!(max_abs_diff(&rec, &m) < 1e-12);
    }

    #[test]
    fn generalized_matches_inverse_product() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let c = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.7]);
        let (vals, g, ridge) = generalized_eigh(&a, &c, 1e-8).unwrap();
        assert_eq!(ridge, 0.0);
        let cinv_a = c.clone().try_inverse().unwrap() * &a;
        for i in 0..2 {
            let v = g.column(i).into_owned();
            let lhs = &cinv_a * &v;
            assert!((lhs - v * vals[i]).amax() < 1e-12);
        }
    }

    #[test]
    fn ridge_rescues_singular() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (_, ridge) = cholesky_with_ridge(&c, 1e-8).unwrap();
        assert!(ridge > 0.0);
    }
}
