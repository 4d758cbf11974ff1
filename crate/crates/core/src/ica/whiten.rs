//! Centering and PCA whitening.
//!
//! Rows of the data matrix are observations, columns are variables. When
//! there are more variables than observations (patches: 100 rows, S*S
//! columns) the eigenproblem is solved on the n x n Gram matrix instead of
//! the D x D covariance; both yield the same leading eigenpairs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

/// Retained whitening transform: `z = (x - mean) * basis * diag(1/sqrt(eigenvalues))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitening {
    pub mean: DVector<f64>,
    /// D x k, orthonormal columns (principal directions).
    pub basis: DMatrix<f64>,
    /// k leading covariance eigenvalues, descending.
    pub eigenvalues: DVector<f64>,
}

impl Whitening {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        let mut z = centered * &self.basis;
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col /= self.eigenvalues[j].sqrt();
        }
        z
    }

    /// Maps whitened-space row vectors (k columns) back to pixel space
    /// (D columns), without re-adding the mean.
    pub fn dewhiten(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        let mut scaled = rows.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.eigenvalues[j].sqrt();
        }
        scaled * self.basis.transpose()
    }
}

// Largest-magnitude coordinate made positive, so eigenvector signs are
// reproducible.
fn fix_sign(mut v: DVector<f64>) -> DVector<f64> {
    let mut best = 0;
    for i in 0..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
    v
}

/// Eigenpairs of a symmetric matrix sorted by eigenvalue, descending.
pub(crate) fn sorted_eigen(m: DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, DVector<f64>)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .map(|(&l, v)| (l, fix_sign(v.into_owned())))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

/// Removes column means and projects onto the top-`k` principal directions,
/// scaled to unit variance. Returns the whitened data (n x k) and the transform.
pub fn center_whiten(x: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, Whitening)> {
    let (n, d) = x.shape();
    if k == 0 || n < 2 || k > (n - 1).min(d) {
        return Err(Error::usage(format!(
            "cannot whiten {n}x{d} data to {k} components (need 1 <= k <= min(rows - 1, cols))"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("data matrix contains non-finite values"));
    }
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let scale = 1.0 / (n - 1) as f64;

    let (eigenvalues, basis) = if d <= n {
        let cov = centered.transpose() * &centered * scale;
        let pairs = sorted_eigen(cov);
        check_rank(&pairs, k)?;
        let values = DVector::from_iterator(k, pairs.iter().take(k).map(|p| p.0));
        let vectors: Vec<DVector<f64>> = pairs.into_iter().take(k).map(|p| p.1).collect();
        (values, DMatrix::from_columns(&vectors))
    } else {
        let gram = &centered * centered.transpose() * scale;
        let pairs = sorted_eigen(gram);
        check_rank(&pairs, k)?;
        let values = DVector::from_iterator(k, pairs.iter().take(k).map(|p| p.0));
        let vectors: Vec<DVector<f64>> = pairs
            .into_iter()
            .take(k)
            .map(|(_, u)| fix_sign((centered.transpose() * u).normalize()))
            .collect();
        (values, DMatrix::from_columns(&vectors))
    };

    let whitening = Whitening {
        mean,
        basis,
        eigenvalues,
    };
    let z = whitening.transform(x);
    Ok((z, whitening))
}

fn check_rank(pairs: &[(f64, DVector<f64>)], k: usize) -> Result<()> {
    let top = pairs.first().map(|p| p.0).unwrap_or(0.0);
    let rank = if top > 0.0 {
        pairs.iter().filter(|p| p.0 > top * RANK_TOL).count()
    } else {
        0
    };
    if rank < k {
        return Err(Error::InsufficientRank { requested: k, rank });
    }
    Ok(())
}

/// Sample covariance of the columns (n - 1 denominator).
pub fn covariance(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    let mean = z.row_mean();
    let mut centered = z.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    centered.transpose() * &centered / (n - 1) as f64
}
