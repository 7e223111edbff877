//! Euclidean projection onto the probability simplex.

use nalgebra::DMatrix;

use crate::data::Labeling;
use crate::exec::Execution;

/// Row-stochastic `m × K` matrix: one probability vector over classes per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelMatrix(DMatrix<f64>);

pub const ROW_SUM_TOL: f64 = 1e-12;

impl SoftLabelMatrix {
    /// Every row equal to `1/K`.
    pub fn uniform(m: usize, k: usize) -> Self {
        Self(DMatrix::from_element(m, k, 1.0 / k as f64))
    }

    /// Wraps `values` if every row is on the simplex (within [`ROW_SUM_TOL`]).
    pub fn new(values: DMatrix<f64>) -> Option<Self> {
        is_row_stochastic(&values, ROW_SUM_TOL).then_some(Self(values))
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl Labeling for SoftLabelMatrix {
    fn weights(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn is_row_stochastic(m: &DMatrix<f64>, tol: f64) -> bool {
    m.iter().all(|&v| (-tol..=1.0 + tol).contains(&v))
        && m.row_iter().all(|r| (r.sum() - 1.0).abs() <= tol * r.len().max(1) as f64)
}

/// Projects `v` onto `{b : b ≥ 0, Σ b = 1}` by sorting and thresholding.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));

    // Largest support size rho with sorted[rho-1] - tau(rho) > 0.
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            tau = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|&x| (x - tau).max(0.0)).collect();

    // Renormalise away rounding drift in the threshold.
    let total: f64 = out.iter().sum();
    if total > 0.0 && (total - 1.0).abs() > f64::EPSILON {
        out.iter_mut().for_each(|x| *x /= total);
    }
    out
}

/// Projects every row of `q` independently.
pub fn project_rows(q: &DMatrix<f64>) -> SoftLabelMatrix {
    project_rows_with(q, Execution::default())
}

pub fn project_rows_with(q: &DMatrix<f64>, exec: Execution) -> SoftLabelMatrix {
    let (m, k) = q.shape();
    let rows = exec.for_rows(m).map(m, |j| {
        let row: Vec<f64> = q.row(j).iter().copied().collect();
        project_simplex(&row)
    });
    SoftLabelMatrix(DMatrix::from_fn(m, k, |j, c| rows[j][c]))
}
