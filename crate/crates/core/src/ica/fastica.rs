//! Symmetric FastICA on whitened data with the tanh contrast.
//!
//! Each step updates every row of the unmixing matrix `W` at once,
//!
//! ```text
//! W+ = E[g(W z) z^T] - diag(E[g'(W z)]) W,   g = tanh,  g' = 1 - tanh^2
//! W  = (W+ W+^T)^(-1/2) W+
//! ```
//!
//! and stops once every row is (up to sign) unchanged:
//! `max_i |1 - |w_i+ . w_i|| < tol`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::whiten::sorted_eigen;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FastIcaParams {
    pub k: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FastIcaParams {
    fn default() -> Self {
        Self {
            k: 8,
            seed: 0,
            tol: 1e-5,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unmixing {
    /// k x k, orthonormal rows.
    pub w: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Convergence measure of the returned iterate.
    pub delta: f64,
}

/// Standard-normal k x k matrix drawn from a ChaCha8 stream seeded with `seed`.
pub fn initial_unmixing(k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..k * k)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    DMatrix::from_row_slice(k, k, &values)
}

/// `(W W^T)^(-1/2) W`.
pub fn symmetric_decorrelation(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = w.nrows();
    let pairs = sorted_eigen(w * w.transpose());
    let mut inv_sqrt = DMatrix::zeros(k, k);
    for (value, vector) in &pairs {
        if !(*value > 0.0) {
            return Err(Error::data("unmixing matrix became singular"));
        }
        inv_sqrt += vector * vector.transpose() / value.sqrt();
    }
    Ok(inv_sqrt * w)
}

/// Runs FastICA from the seeded initial matrix.
pub fn fastica(z: &DMatrix<f64>, params: &FastIcaParams) -> Result<Unmixing> {
    if z.ncols() != params.k {
        return Err(Error::usage(format!(
            "whitened data has {} columns but {} components were requested",
            z.ncols(),
            params.k
        )));
    }
    fastica_from(
        z,
        &initial_unmixing(params.k, params.seed),
        params.tol,
        params.max_iter,
    )
}

/// Runs FastICA from a caller-supplied initial matrix. Without convergence the
/// iterate with the smallest update is returned, flagged `converged = false`.
pub fn fastica_from(
    z: &DMatrix<f64>,
    w0: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Unmixing> {
    let (n, k) = z.shape();
    if w0.shape() != (k, k) {
        return Err(Error::usage(format!(
            "initial unmixing matrix is {:?}, expected {k}x{k}",
            w0.shape()
        )));
    }
    if n == 0 || max_iter == 0 || !(tol > 0.0) {
        return Err(Error::usage(
            "fastica needs data, max_iter >= 1 and tol > 0",
        ));
    }
    let mut w = symmetric_decorrelation(w0)?;
    let mut best = Unmixing {
        w: w.clone(),
        iterations: 0,
        converged: false,
        delta: f64::INFINITY,
    };
    for iteration in 1..=max_iter {
        let g = (z * w.transpose()).map(f64::tanh);
        let mean_dg = DVector::from_iterator(
            k,
            g.column_iter()
                .map(|c| c.iter().map(|t| 1.0 - t * t).sum::<f64>() / n as f64),
        );
        let mut update = g.transpose() * z / n as f64;
        for i in 0..k {
            let mut row = update.row_mut(i);
            row -= w.row(i) * mean_dg[i];
        }
        let w_new = symmetric_decorrelation(&update)?;
        let delta = (0..k)
            .map(|i| (1.0 - w_new.row(i).dot(&w.row(i)).abs()).abs())
            .fold(0.0, f64::max);
        w = w_new;
        if delta < best.delta {
            best = Unmixing {
                w: w.clone(),
                iterations: iteration,
                converged: false,
                delta,
            };
        }
        if delta < tol {
            return Ok(Unmixing {
                w,
                iterations: iteration,
                converged: true,
                delta,
            });
        }
    }
    log::warn!(
        "fastica did not converge in {max_iter} iterations (best delta {:.3e})",
        best.delta
    );
    Ok(best)
}
