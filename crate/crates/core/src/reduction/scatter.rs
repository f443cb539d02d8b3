//! Cumulative total and between-class scatter.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Running sums for the total covariance `T` and between-class covariance `B`.
#[derive(Debug, Clone)]
pub struct ScatterAccumulator {
    /// Σ x over all records.
    pub gamma: DVector<f64>,
    /// Σ x xᵀ over all records.
    pub phi: DMatrix<f64>,
    /// Σ m mᵀ over class centres.
    pub psi: DMatrix<f64>,
    pub n: usize,
    pub class_sizes: Vec<usize>,
}

/// Finalised scatter statistics.
#[derive(Debug, Clone)]
pub struct Scatter {
    pub total: DMatrix<f64>,
    pub between: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub n: usize,
    pub classes: usize,
}

impl ScatterAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: DVector::zeros(dim),
            phi: DMatrix::zeros(dim, dim),
            psi: DMatrix::zeros(dim, dim),
            n: 0,
            class_sizes: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn classes(&self) -> usize {
        self.class_sizes.len()
    }

    /// Adds one class given its members as rows (`n_c × dim`). The class
    /// centre is the member mean, or `centre` when given (original-print variant).
    pub fn add_class(&mut self, members: &DMatrix<f64>, centre: Option<&DVector<f64>>) -> Result<()> {
        if members.ncols() != self.dim() {
            return Err(invalid(format!("record dimension {} != {}", members.ncols(), self.dim())));
        }
        if members.nrows() == 0 {
            return Err(invalid("empty class"));
        }
        let mean = match centre {
            Some(c) => c.clone(),
            None => members.row_mean().transpose(),
        };
        for row in members.row_iter() {
            self.gamma += row.transpose();
        }
        self.phi.gemm_tr(1.0, members, members, 1.0);
        self.psi.ger(1.0, &mean, &mean, 1.0);
        self.n += members.nrows();
        self.class_sizes.push(members.nrows());
        Ok(())
    }

    pub fn merge(&mut self, other: &ScatterAccumulator) {
        self.gamma += &other.gamma;
        self.phi += &other.phi;
        self.psi += &other.psi;
        self.n += other.n;
        self.class_sizes.extend_from_slice(&other.class_sizes);
    }

    pub fn finalize(&self) -> Result<Scatter> {
        let c = self.classes();
        if c < 2 {
            return Err(Error::InsufficientData(format!("need at least 2 classes, have {c}")));
        }
        let n = self.n as f64;
        let cf = c as f64;
        let mean = &self.gamma / n;
        let mmt = &mean * mean.transpose();
        let total = sym(&self.phi / (n - 1.0) - &mmt * (n / (n - 1.0)));
        let between = sym(&self.psi / (cf - 1.0) - &mmt * (cf / (cf - 1.0)));
        Ok(Scatter { total, between, mean, n: self.n, classes: c })
    }
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduction::linalg::covariance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_records_give_zero() {
        let mut acc = ScatterAccumulator::new(3);
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        acc.add_class(&x, None).unwrap();
        acc.add_class(&x, None).unwrap();
        let s = acc.finalize().unwrap();
        assert!(s.total.amax() < 1e-12 && s.between.amax() < 1e-12);
    }

    #[test]
    fn two_singleton_classes() {
        let mut acc = ScatterAccumulator::new(2);
        acc.add_class(&DMatrix::from_row_slice(1, 2, &[1.0, 5.0]), None).unwrap();
        acc.add_class(&DMatrix::from_row_slice(1, 2, &[3.0, -1.0]), None).unwrap();
        let s = acc.finalize().unwrap();
        let pts = DMatrix::from_column_slice(2, 2, &[1.0, 5.0, 3.0, -1.0]);
        let cov = covariance(&pts);
        assert!((&s.between - &cov).amax() < 1e-12);
        assert!((&s.total - &s.between).amax() < 1e-12);
    }

    #[test]
    fn batched_matches_one_shot_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = DMatrix::from_fn(100, 6, |_, _| rng.random::<f64>() * 4.0 - 1.0);
        let mut a = ScatterAccumulator::new(6);
        let mut b = ScatterAccumulator::new(6);
        for c in 0..20 {
            let rows = data.rows(c * 5, 5).into_owned();
            if c < 9 { a.add_class(&rows, None).unwrap() } else { b.add_class(&rows, None).unwrap() }
        }
        a.merge(&b);
        let s = a.finalize().unwrap();
        let cov = covariance(&data.transpose());
        assert!((&s.total - &cov).amax() < 1e-10);
        let means = DMatrix::from_fn(6, 20, |d, c| data.rows(c * 5, 5).column(d).mean());
        assert!((&s.between - covariance(&means)).amax() < 1e-10);
        assert_eq!(s.n, 100);
    }

    #[test]
    fn single_class_is_an_error() {
        let mut acc = ScatterAccumulator::new(2);
        acc.add_class(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]), None).unwrap();
        assert!(acc.finalize().is_err());
    }
}
