//! Sample-selection-biased subsampling.
//!
//! For every class a seed point is chosen (the class member closest to the
//! origin in Mahalanobis distance) and `round(π_k n)` members are drawn
//! without replacement with probability proportional to `exp(−d(x_0, x))`,
//! where `d` is the squared Mahalanobis distance under the covariance of all
//! data. The result concentrates the source sample around one point per class.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Eigenvalue floor applied before inverting the data covariance.
pub const COV_EIGEN_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasSampleSpec {
    pub n_source: usize,
    pub rng_seed: u64,
}

/// Empirical class frequencies `count(k) / n` for labels in `1..=k`.
pub fn class_priors(labels: &[usize], k: usize) -> Result<DVector<f64>> {
    if labels.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut counts = DVector::zeros(k);
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 || l > k {
            return Err(Error::LabelOutOfRange {
                index: i,
                label: l,
                classes: k,
            });
        }
        counts[l - 1] += 1.0;
    }
    Ok(counts / labels.len() as f64)
}

/// `(x0 − xk)ᵀ Σ⁻¹ (x0 − xk)`.
pub fn mahalanobis_sq(x0: &[f64], xk: &[f64], cov_inv: &DMatrix<f64>) -> Result<f64> {
    let d = cov_inv.nrows();
    for len in [x0.len(), xk.len(), cov_inv.ncols()] {
        if len != d {
            return Err(Error::DimensionMismatch {
                what: "vector length",
                expected: d,
                found: len,
            });
        }
    }
    let diff = DVector::from_iterator(d, x0.iter().zip(xk).map(|(a, b)| a - b));
    Ok((diff.transpose() * cov_inv * &diff)[(0, 0)].max(0.0))
}

/// Inverse of the sample covariance of all rows (`n − 1` denominator), with
/// eigenvalues floored at [`COV_EIGEN_FLOOR`].
pub fn covariance_inverse(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let eig = cov.symmetric_eigen();
    if eig.eigenvalues.iter().any(|e| !e.is_finite()) {
        return Err(Error::SingularCovariance);
    }
    let inv_vals = eig.eigenvalues.map(|e| 1.0 / e.max(COV_EIGEN_FLOOR));
    let v = &eig.eigenvectors;
    let inv = v * DMatrix::from_diagonal(&inv_vals) * v.transpose();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Integer quotas summing to `n` by the largest-remainder rule; equal
/// remainders go to the lower class index.
pub fn class_quotas(priors: &DVector<f64>, n: usize) -> Vec<usize> {
    let exact: Vec<f64> = priors.iter().map(|p| p * n as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().take(n.saturating_sub(assigned)) {
        quotas[c] += 1;
    }
    quotas
}

/// Draws `count` distinct positions with probability proportional to
/// `exp(log_weights[i])`, sequentially without replacement.
///
/// Uses the top-`count` of the keys `log_weights[i] − ln(−ln u_i)`, which
/// orders candidates exactly as `u_i^(1/w_i)` without underflow for tiny weights.
pub fn weighted_sample<R: Rng>(log_weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = log_weights
        .iter()
        .enumerate()
        .map(|(i, &lw)| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (lw - (-u.ln()).ln(), i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(count).map(|(_, i)| i).collect()
}

/// Row indices (0-based) of a biased source sample, grouped by class and
/// ascending within each class.
pub fn sample_biased(data: &Dataset, spec: &BiasSampleSpec) -> Result<Vec<usize>> {
    let labels = data.labels()?;
    if spec.n_source == 0 {
        return Err(Error::InvalidOption("n_source must be >= 1".into()));
    }
    let k = data.n_classes;
    let priors = class_priors(labels, k)?;
    let quotas = class_quotas(&priors, spec.n_source);
    let cov_inv = covariance_inverse(&data.features)?;
    let origin = vec![0.0; data.n_features()];
    let row = |i: usize| -> Vec<f64> { data.features.row(i).iter().copied().collect() };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut out = Vec::with_capacity(spec.n_source);
    for (c, &quota) in quotas.iter().enumerate() {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c + 1).collect();
        if quota > members.len() {
            return Err(Error::QuotaExceedsClass {
                class: c + 1,
                quota,
                available: members.len(),
            });
        }
        if quota == 0 {
            continue;
        }
        let mut seed = members[0];
        let mut seed_dist = f64::INFINITY;
        for &i in &members {
            let d = mahalanobis_sq(&row(i), &origin, &cov_inv)?;
            if d < seed_dist {
                seed_dist = d;
                seed = i;
            }
        }
        let x0 = row(seed);
        let log_w = members
            .iter()
            .map(|&i| Ok(-mahalanobis_sq(&x0, &row(i), &cov_inv)?))
            .collect::<Result<Vec<f64>>>()?;
        let mut picked: Vec<usize> = weighted_sample(&log_w, quota, &mut rng)
            .into_iter()
            .map(|p| members[p])
            .collect();
        picked.sort_unstable();
        out.extend(picked);
    }
    Ok(out)
}

/// One-column CSV with header `index`.
pub fn write_indices_csv<W: Write>(indices: &[usize], mut out: W) -> Result<()> {
    writeln!(out, "index")?;
    for i in indices {
        writeln!(out, "{i}")?;
    }
    Ok(())
}
