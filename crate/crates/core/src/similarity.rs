//! Pairwise neuron similarity (Pearson correlation) and dissimilarity
//! (Euclidean distance) between CoF rows of one layer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cof::CofMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    Pearson,
    Euclidean,
}

impl SimilarityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityKind::Pearson => "pearson",
            SimilarityKind::Euclidean => "euclidean",
        }
    }
}

/// Symmetric N x N matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub layer_index: u16,
    pub kind: SimilarityKind,
    pub n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Dense CSV without header; row i holds entries (i, 0..n).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|j| format!("{}", self.get(i, j))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn require_pairs(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::data(format!(
            "similarity needs at least 2 neurons, got {n}"
        )));
    }
    Ok(())
}

// Evaluates `f` once per unordered pair (i < j), mirrors it, and writes
// `diag` on the diagonal. Rows are spread over the rayon pool; the result
// does not depend on the partitioning.
fn pairwise<F>(n: usize, diag: f64, f: F) -> Vec<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| ((i + 1)..n).map(|j| f(i, j)).collect())
        .collect();
    let mut values = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        values[i * n + i] = diag;
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    values
}

/// Pearson correlation of two equal-length vectors; 0 when either is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn pearson_rows(layer_index: u16, rows: &[Vec<f64>]) -> Result<SimilarityMatrix> {
    require_pairs(rows.len())?;
    Ok(SimilarityMatrix {
        layer_index,
        kind: SimilarityKind::Pearson,
        n: rows.len(),
        values: pairwise(rows.len(), 1.0, |i, j| pearson(&rows[i], &rows[j])),
    })
}

pub fn euclidean_rows(layer_index: u16, rows: &[Vec<f64>]) -> Result<SimilarityMatrix> {
    require_pairs(rows.len())?;
    Ok(SimilarityMatrix {
        layer_index,
        kind: SimilarityKind::Euclidean,
        n: rows.len(),
        values: pairwise(rows.len(), 0.0, |i, j| euclidean(&rows[i], &rows[j])),
    })
}

pub fn pearson_matrix(m: &CofMatrix) -> Result<SimilarityMatrix> {
    pearson_rows(m.layer_index, &m.rows_f64())
}

pub fn euclidean_matrix(m: &CofMatrix) -> Result<SimilarityMatrix> {
    euclidean_rows(m.layer_index, &m.rows_f64())
}

/// Mean over strictly off-diagonal entries.
pub fn layer_average(s: &SimilarityMatrix) -> Result<f64> {
    require_pairs(s.n)?;
    let mut acc = 0.0;
    for i in 0..s.n {
        for j in 0..s.n {
            if i != j {
                acc += s.get(i, j);
            }
        }
    }
    Ok(acc / (s.n * (s.n - 1)) as f64)
}
