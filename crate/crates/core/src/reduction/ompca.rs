//! Orthogonal Mahalanobis PCA: an orthonormal basis built one direction at a
//! time, each maximising negative-pair variance under the positive-pair metric
//! inside the orthogonal complement of the previous directions.

use nalgebra::{DMatrix, DVector};

use super::linalg::{canonical_sign, covariance, generalized_eigh, trace};
use crate::error::{invalid, Result};

/// Ridge applied to the positive covariance when it is not positive definite.
pub const OMPCA_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct OmpcaFit {
    /// `K × J` with orthonormal rows.
    pub projection: DMatrix<f64>,
    /// Generalised Rayleigh quotient of each selected direction.
    pub quotients: Vec<f64>,
}

/// Fits from the two distributions given as column samples (`J × n`).
pub fn fit_ompca(pos: &DMatrix<f64>, neg: &DMatrix<f64>, k: usize) -> Result<OmpcaFit> {
    if pos.nrows() != neg.nrows() {
        return Err(invalid("positive and negative distributions differ in dimension"));
    }
    fit_ompca_cov(&covariance(pos), &covariance(neg), k)
}

/// Same recursion on covariance matrices; projecting the samples onto a
/// subspace is equivalent to congruence of their covariances.
pub fn fit_ompca_cov(c_pos: &DMatrix<f64>, c_neg: &DMatrix<f64>, k: usize) -> Result<OmpcaFit> {
    let j = c_pos.nrows();
    if k > j {
        return Err(invalid(format!("K = {k} exceeds input dimension {j}")));
    }
    let mut p = DMatrix::<f64>::identity(j, j);
    let mut cp = c_pos.clone();
    let mut cn = c_neg.clone();
    let mut quotients = Vec::with_capacity(k);
    for step in 0..k {
        let d = j - step;
        let g = if d == 1 {
            DVector::from_element(1, 1.0)
        } else {
            let reg = regularised(&cp);
            let (_, vecs, _) = generalized_eigh(&cn, &reg, OMPCA_RIDGE)?;
            let mut g = vecs.column(0).into_owned();
            g /= g.norm();
            canonical_sign(&mut g);
            g
        };
        quotients.push(g.dot(&(&cn * &g)) / g.dot(&(&cp * &g)).max(f64::MIN_POSITIVE));
        let q = householder_with_first_column(&g);
        let rows = p.rows(step, d).into_owned();
        p.rows_mut(step, d).copy_from(&(q.transpose() * rows));
        if d > 1 {
            cp = (q.transpose() * &cp * &q).view((1, 1), (d - 1, d - 1)).into_owned();
            cn = (q.transpose() * &cn * &q).view((1, 1), (d - 1, d - 1)).into_owned();
        }
    }
    Ok(OmpcaFit { projection: p.rows(0, k).into_owned(), quotients })
}

fn regularised(c: &DMatrix<f64>) -> DMatrix<f64> {
    if c.clone().cholesky().is_some() {
        return c.clone();
    }
    let n = c.nrows();
    let lambda = OMPCA_RIDGE * trace(c).abs().max(f64::MIN_POSITIVE) / n as f64;
    c + DMatrix::identity(n, n) * lambda
}

/// Orthogonal (symmetric) reflection whose first column is the unit vector `g`.
pub fn householder_with_first_column(g: &DVector<f64>) -> DMatrix<f64> {
    let n = g.len();
    let mut u = -g.clone();
    u[0] += 1.0;
    let uu = u.dot(&u);
    if uu < 1e-24 {
        return DMatrix::identity(n, n);
    }
    DMatrix::identity(n, n) - (&u * u.transpose()) * (2.0 / uu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn elongated(n: usize, angle_deg: f64, major: f64, minor: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let (s, c) = angle_deg.to_radians().sin_cos();
        let mut m = DMatrix::zeros(2, n);
        for i in 0..n {
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            let (a, b) = (a * major, b * minor);
            m[(0, i)] = c * a - s * b;
            m[(1, i)] = s * a + c * b;
        }
        m
    }

    #[test]
    fn householder_first_column() {
        let g = DVector::from_vec(vec![0.6, 0.0, 0.8]);
        let q = householder_with_first_column(&g);
        assert!((q.column(0) - &g).amax() < 1e-15);
        assert!((q.transpose() * &q - DMatrix::identity(3, 3)).amax() < 1e-15);
        let e = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(householder_with_first_column(&e), DMatrix::identity(2, 2));
    }

    #[test]
    fn identity_metric_reduces_to_pca() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mix = DMatrix::from_fn(5, 5, |_, _| { let v: f64 = StandardNormal.sample(&mut rng); v });
        let neg = &mix * DMatrix::from_fn(5, 3000, |_, _| { let v: f64 = StandardNormal.sample(&mut rng); v });
        let c_neg = covariance(&neg);
        let fit = fit_ompca_cov(&DMatrix::identity(5, 5), &c_neg, 3).unwrap();
        let (_, vecs) = crate::reduction::linalg::eigh_desc(&c_neg);
        let cos = fit.projection.row(0).transpose().dot(&vecs.column(0));
        assert!(cos.abs() > 0.999);
    }

    #[test]
    fn two_dimensional_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for pos_angle in [120.0, 80.0] {
            let neg = elongated(20000, 30.0, 3.0, 1.0, &mut rng);
            let pos = elongated(20000, pos_angle, 1.0, 0.3, &mut rng);
            let fit = fit_ompca(&pos, &neg, 2).unwrap();
            let (cp, cn) = (covariance(&pos), covariance(&neg));
            // brute-force maximiser of the Rayleigh quotient on the half circle
            let mut best = (f64::MIN, 0.0);
            for i in 0..18_000 {
                let th = (i as f64 / 100.0).to_radians();
                let v = DVector::from_vec(vec![th.cos(), th.sin()]);
                let rq = v.dot(&(&cn * &v)) / v.dot(&(&cp * &v));
                if rq > best.0 {
                    best = (rq, th.to_degrees());
                }
            }
            let r0 = fit.projection.row(0);
            let ang = r0[1].atan2(r0[0]).to_degrees();
            let diff = (ang - best.1).rem_euclid(180.0);
            assert!(diff.min(180.0 - diff) < 1.0, "{ang} vs {}", best.1);
            // between the negative major axis and the positive minor axis
            let minor = pos_angle - 90.0;
            let a = (ang + 90.0).rem_euclid(180.0) - 90.0;
            assert!(a >= minor.min(30.0) - 1.0 && a <= minor.max(30.0) + 1.0, "{a}");
            assert!((&fit.projection * fit.projection.transpose() - DMatrix::identity(2, 2)).amax() < 1e-12);
        }
    }

    #[test]
    fn orthonormal_rows_and_sorted_quotients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(12, 12, |_, _| { let v: f64 = StandardNormal.sample(&mut rng); v });
        let b = DMatrix::from_fn(12, 12, |_, _| { let v: f64 = StandardNormal.sample(&mut rng); v });
        let pos = &a * DMatrix::from_fn(12, 2000, |_, _| { let v: f64 = StandardNormal.sample(&mut rng); v });
        let neg = &b * DMatrix::from_fn(12, 2000, |_, _| { let v: f64 = StandardNormal.sample(&mut rng); v });
        let fit = fit_ompca(&pos, &neg, 8).unwrap();
        let gram = &fit.projection * fit.projection.transpose();
        assert!((gram - DMatrix::identity(8, 8)).amax() < 1e-8);
        for w in fit.quotients.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6));
        }
        assert!(fit_ompca(&pos, &neg, 13).is_err());
    }
}
