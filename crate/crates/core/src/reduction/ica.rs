//! Symmetric FastICA (cubic contrast) with whitening.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::linalg::eigh_desc;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcaConfig {
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for IcaConfig {
    fn default() -> Self {
        Self { seed: 0x1CA, max_iter: 500, tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct IcaFit {
    /// `Y = projection · x + offset` is centred with identity covariance.
    pub projection: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Fits on samples stored as rows (`n × dim`). Falls back to plain
/// whitening when the rotation does not converge.
pub fn fit_ica(samples: &DMatrix<f64>, cfg: &IcaConfig) -> Result<IcaFit> {
    let (n, dim) = samples.shape();
    if n <= dim {
        return Err(Error::InsufficientData(format!("ICA needs more than {dim} samples, got {n}")));
    }
    let mean: DVector<f64> = samples.row_mean().transpose();
    let mut centred = samples.clone();
    for mut row in centred.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    let (vals, vecs) = eigh_desc(&cov);
    let top = vals[0];
    if !(top > 0.0) || vals.iter().any(|&v| v <= top * 1e-14) {
        return Err(Error::LinAlg("degenerate covariance before ICA".into()));
    }
    let scale = DMatrix::from_diagonal(&DVector::from_iterator(dim, vals.iter().map(|v| 1.0 / v.sqrt())));
    let whiten = scale * vecs.transpose();
    let xw = &centred * whiten.transpose();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = sym_decorrelate(&DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng)));
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=cfg.max_iter {
        iterations = it;
        let y = &xw * w.transpose();
        let g = y.map(|u| u * u * u);
        let gp_mean = DVector::from_iterator(dim, y.column_iter().map(|c| 3.0 * c.map(|u| u * u).mean()));
        let mut next = g.transpose() * &xw / n as f64;
        for i in 0..dim {
            let row = w.row(i) * gp_mean[i];
            let mut r = next.row_mut(i);
            r -= row;
        }
        let next = sym_decorrelate(&next);
        let change = (0..dim)
            .map(|i| (1.0 - next.row(i).dot(&w.row(i)).abs()).abs())
            .fold(0.0f64, f64::max);
        w = next;
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    let projection = if converged {
        for i in 0..dim {
            let mut row = w.row(i).transpose();
            super::linalg::canonical_sign(&mut row);
            w.set_row(i, &row.transpose());
        }
        &w * &whiten
    } else {
        whiten
    };
    let offset = -(&projection * &mean);
    Ok(IcaFit { projection, offset, converged, iterations })
}

/// `(W Wᵀ)^{-1/2} W`.
fn sym_decorrelate(w: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = eigh_desc(&(w * w.transpose()));
    let d = DMatrix::from_diagonal(&DVector::from_iterator(vals.len(), vals.iter().map(|v| 1.0 / v.max(1e-300).sqrt())));
    &vecs * d * vecs.transpose() * w
}
