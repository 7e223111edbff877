//! Linear and quadratic discriminant analysis with soft class weights, and
//! their TCP adaptation.
//!
//! The loss of a sample is the class-weighted negative log-likelihood
//! `Σ_k −q_k log[π_k N(z | μ_k, Σ_k)]`. For a fixed labeling the minimiser is
//! available in closed form (weighted priors, means and scatter matrices),
//! which makes the saddle iteration an alternation of exact refits and
//! projected ascent steps on the labeling.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Labeling;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::saddle::{solve_saddle, SaddleResult, SolverOptions};
use crate::simplex::SoftLabelMatrix;

/// Classes whose soft mass falls below this fraction of `m` are degenerate.
pub const MASS_FLOOR_FRACTION: f64 = 1e-10;
/// Smallest prior used inside a logarithm.
pub const LOG_PRIOR_FLOOR: f64 = 1e-300;
/// Eigenvalue floor keeping every stored covariance positive definite.
pub const MIN_EIGENVALUE: f64 = 1e-10;

const ROW_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DaVariant {
    /// One covariance shared by all classes.
    Lda,
    /// One covariance per class.
    Qda,
}

impl fmt::Display for DaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DaVariant::Lda => "lda",
            DaVariant::Qda => "qda",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub variant: DaVariant,
    pub priors: DVector<f64>,
    /// `K × D`, one class mean per row.
    pub means: DMatrix<f64>,
    /// `K` matrices for QDA, a single shared matrix for LDA.
    pub covariances: Vec<DMatrix<f64>>,
    pub lambda: f64,
}

impl GaussianParams {
    pub fn n_classes(&self) -> usize {
        self.priors.len()
    }

    pub fn n_features(&self) -> usize {
        self.means.ncols()
    }

    pub fn covariance(&self, k: usize) -> &DMatrix<f64> {
        match self.variant {
            DaVariant::Lda => &self.covariances[0],
            DaVariant::Qda => &self.covariances[k],
        }
    }

    /// `Σ_k π_k μ_k`.
    pub fn total_mean(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_features());
        for k in 0..self.n_classes() {
            out += self.means.row(k).transpose() * self.priors[k];
        }
        out
    }

    /// Class scores `log π_k + log N(z_j | μ_k, Σ_k)`; the predicted class is
    /// the row-wise argmax.
    pub fn predict(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        log_joint(self, z)
    }
}

/// Clamps the eigenvalues of the symmetrised `s` at zero, then adds `λI`.
pub fn regularize_cov(s: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    clamp_spectrum(s, lambda, 0.0)
}

fn clamp_spectrum(s: &DMatrix<f64>, lambda: f64, floor: f64) -> DMatrix<f64> {
    let sym = (s + s.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig
        .eigenvalues
        .map(|e| (e.max(0.0) + lambda).max(floor));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&vals) * v.transpose();
    (&out + out.transpose()) * 0.5
}

fn floor_spectrum(s: &DMatrix<f64>) -> DMatrix<f64> {
    clamp_spectrum(s, 0.0, MIN_EIGENVALUE)
}

/// Closed-form weighted Gaussian estimates for the labeling `q`.
pub fn fit_da(
    x: &DMatrix<f64>,
    q: &impl Labeling,
    variant: DaVariant,
    lambda: f64,
) -> Result<GaussianParams> {
    fit_da_warm(x, q, variant, lambda, None)
}

/// [`fit_da`] that keeps a degenerate class's mean at its value in `previous`.
///
/// A class whose total mass `Σ_j q_kj` is below `MASS_FLOOR_FRACTION · m`
/// gets prior `MASS_FLOOR_FRACTION` (before renormalisation), the previous
/// mean (or the sample mean when there is none) and covariance `λI`.
pub fn fit_da_warm(
    x: &DMatrix<f64>,
    q: &impl Labeling,
    variant: DaVariant,
    lambda: f64,
    previous: Option<&GaussianParams>,
) -> Result<GaussianParams> {
    let q = q.weights();
    let (m, d) = x.shape();
    let k = q.ncols();
    if m == 0 {
        return Err(Error::EmptyData);
    }
    if q.nrows() != m {
        return Err(Error::DimensionMismatch {
            what: "label rows",
            expected: m,
            found: q.nrows(),
        });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidOption(format!("lambda must be >= 0, got {lambda}")));
    }

    let mass_floor = MASS_FLOOR_FRACTION * m as f64;
    let mut priors = DVector::zeros(k);
    let mut means = DMatrix::zeros(k, d);
    let mut class_covs = Vec::with_capacity(k);

    for c in 0..k {
        let w = q.column(c);
        let mass = w.sum();
        if mass < mass_floor {
            priors[c] = mass_floor / m as f64;
            let mean = match previous {
                Some(p) if p.n_classes() == k && p.n_features() == d => p.means.row(c).into_owned(),
                _ => x.row_mean(),
            };
            means.set_row(c, &mean);
            class_covs.push(DMatrix::zeros(d, d));
            continue;
        }
        priors[c] = mass / m as f64;
        let mean = (x.transpose() * w).transpose() / mass;
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= &mean;
        }
        let mut weighted = centered.clone();
        for (j, mut row) in weighted.row_iter_mut().enumerate() {
            row *= w[j];
        }
        let scatter = weighted.transpose() * &centered;
        means.set_row(c, &mean);
        class_covs.push(scatter / mass);
    }
    let total = priors.sum();
    priors /= total;

    let covariances = match variant {
        DaVariant::Qda => class_covs
            .iter()
            .map(|s| clamp_spectrum(s, lambda, MIN_EIGENVALUE))
            .collect(),
        DaVariant::Lda => {
            let mut pooled = DMatrix::zeros(d, d);
            for (c, s) in class_covs.iter().enumerate() {
                pooled += regularize_cov(s, lambda) * priors[c];
            }
            vec![floor_spectrum(&pooled)]
        }
    };

    Ok(GaussianParams {
        variant,
        priors,
        means,
        covariances,
        lambda,
    })
}

struct ClassDensity {
    chol: DMatrix<f64>,
    log_norm: f64,
}

fn class_densities(params: &GaussianParams) -> Result<Vec<ClassDensity>> {
    let d = params.n_features();
    let distinct = params.covariances.len();
    let factors = (0..distinct)
        .map(|c| {
            let chol = params.covariances[c]
                .clone()
                .cholesky()
                .ok_or(Error::NotPositiveDefinite { class: c + 1 })?
                .unpack();
            let log_det = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            Ok((chol, log_det))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok((0..params.n_classes())
        .map(|k| {
            let (chol, log_det) = &factors[if distinct == 1 { 0 } else { k }];
            let log_prior = params.priors[k].max(LOG_PRIOR_FLOOR).ln();
            ClassDensity {
                chol: chol.clone(),
                log_norm: log_prior - 0.5 * (d as f64 * (2.0 * PI).ln() + log_det),
            }
        })
        .collect())
}

/// `m × K` matrix of `log π_k + log N(z_j | μ_k, Σ_k)`.
pub fn log_joint(params: &GaussianParams, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    log_joint_with(params, z, Execution::default())
}

pub fn log_joint_with(
    params: &GaussianParams,
    z: &DMatrix<f64>,
    exec: Execution,
) -> Result<DMatrix<f64>> {
    if z.ncols() != params.n_features() {
        return Err(Error::DimensionMismatch {
            what: "feature count",
            expected: params.n_features(),
            found: z.ncols(),
        });
    }
    let dens = class_densities(params)?;
    let (m, k) = (z.nrows(), params.n_classes());
    let chunks = m.div_ceil(ROW_CHUNK);
    let blocks = exec.for_rows(m).map(chunks, |b| {
        let rows = z.rows(b * ROW_CHUNK, ROW_CHUNK.min(m - b * ROW_CHUNK));
        let mut out = DMatrix::zeros(rows.nrows(), k);
        for c in 0..k {
            let mut diff = rows.transpose();
            for mut col in diff.column_iter_mut() {
                col -= params.means.row(c).transpose();
            }
            dens[c].chol.solve_lower_triangular_mut(&mut diff);
            for (j, col) in diff.column_iter().enumerate() {
                out[(j, c)] = dens[c].log_norm - 0.5 * col.norm_squared();
            }
        }
        out
    });
    let mut out = DMatrix::zeros(m, k);
    for (b, block) in blocks.iter().enumerate() {
        out.rows_mut(b * ROW_CHUNK, block.nrows()).copy_from(block);
    }
    Ok(out)
}

fn weighted_nll(log_lik: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<f64> {
    if q.shape() != log_lik.shape() {
        return Err(Error::DimensionMismatch {
            what: "label shape",
            expected: log_lik.ncols(),
            found: q.ncols(),
        });
    }
    let m = log_lik.nrows();
    let mut total = 0.0;
    for j in 0..m {
        for c in 0..log_lik.ncols() {
            let w = q[(j, c)];
            if w != 0.0 {
                total -= w * log_lik[(j, c)];
            }
        }
    }
    Ok(total / m as f64)
}

/// Average class-weighted negative log-likelihood. May be negative.
pub fn da_risk(params: &GaussianParams, z: &DMatrix<f64>, q: &impl Labeling) -> Result<f64> {
    weighted_nll(&log_joint(params, z)?, q.weights())
}

fn check_pair(theta: &GaussianParams, theta_src: &GaussianParams) -> Result<()> {
    if theta.variant != theta_src.variant {
        return Err(Error::VariantMismatch(
            theta.variant.to_string(),
            theta_src.variant.to_string(),
        ));
    }
    if theta.n_classes() != theta_src.n_classes() || theta.n_features() != theta_src.n_features() {
        return Err(Error::DimensionMismatch {
            what: "parameter shape",
            expected: theta_src.n_features(),
            found: theta.n_features(),
        });
    }
    Ok(())
}

/// TCP-DA risk: `da_risk(θ) − da_risk(θ_src)` under the labeling `q`.
pub fn tcp_da_objective(
    theta: &GaussianParams,
    theta_src: &GaussianParams,
    z: &DMatrix<f64>,
    q: &impl Labeling,
) -> Result<f64> {
    check_pair(theta, theta_src)?;
    Ok(da_risk(theta, z, q)? - da_risk(theta_src, z, q)?)
}

/// Gradient of the TCP-DA risk in `q`:
/// `−(1/m) log[π_k N(z_j|μ_k,Σ_k) / (π^S_k N(z_j|μ^S_k,Σ^S_k))]`.
pub fn tcp_da_grad_q(
    theta: &GaussianParams,
    theta_src: &GaussianParams,
    z: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_pair(theta, theta_src)?;
    let lt = log_joint(theta, z)?;
    let ls = log_joint(theta_src, z)?;
    Ok((ls - lt) / z.nrows() as f64)
}

/// Exact maximum over labelings of the TCP-DA contrast for `θ`:
/// `(1/m) Σ_j max_k (log-joint under θ_src − log-joint under θ)`.
pub fn worst_case_contrast(
    theta: &GaussianParams,
    theta_src: &GaussianParams,
    z: &DMatrix<f64>,
) -> Result<f64> {
    check_pair(theta, theta_src)?;
    let lt = log_joint(theta, z)?;
    let ls = log_joint(theta_src, z)?;
    Ok(vertex_contrast(&lt, &ls))
}

fn vertex_contrast(lt: &DMatrix<f64>, ls: &DMatrix<f64>) -> f64 {
    let m = lt.nrows();
    let total: f64 = (0..m)
        .map(|j| {
            (0..lt.ncols())
                .map(|c| ls[(j, c)] - lt[(j, c)])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    total / m as f64
}

/// Log-joint minus the per-sample penalty `(λ/2) tr(Σ_k⁻¹)`, whose weighted
/// minimiser is exactly the `S_k + λI` estimate of [`fit_da`].
fn penalised_log_joint(
    params: &GaussianParams,
    z: &DMatrix<f64>,
    exec: Execution,
) -> Result<DMatrix<f64>> {
    let mut l = log_joint_with(params, z, exec)?;
    if params.lambda > 0.0 {
        for c in 0..params.n_classes() {
            let inv = params
                .covariance(c)
                .clone()
                .cholesky()
                .ok_or(Error::NotPositiveDefinite { class: c + 1 })?
                .inverse();
            let pen = 0.5 * params.lambda * inv.trace();
            l.column_mut(c).add_scalar_mut(-pen);
        }
    }
    Ok(l)
}

/// Fits TCP-LDA / TCP-QDA on unlabeled target features `z`.
///
/// `theta_src` must come from [`fit_da`] with the same `variant` and `lambda`.
/// With `lambda > 0` the contrast is taken on the penalised loss
/// `−log π_k N(z | μ_k, Σ_k) + (λ/2) tr(Σ_k⁻¹)`, for which the regularised
/// closed form is the exact inner minimiser.
///
/// Every iterate's worst-case contrast is known in closed form; the returned
/// parameters are those of the iterate where it is smallest, and
/// `worst_case_contrast` reports it. If it is positive for every iterate the
/// source parameters are returned.
pub fn fit_tcp_da(
    theta_src: &GaussianParams,
    z: &DMatrix<f64>,
    variant: DaVariant,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<SaddleResult<GaussianParams>> {
    if theta_src.variant != variant {
        return Err(Error::VariantMismatch(
            variant.to_string(),
            theta_src.variant.to_string(),
        ));
    }
    if theta_src.lambda != lambda {
        return Err(Error::LambdaMismatch {
            source_lambda: theta_src.lambda,
            target_lambda: lambda,
        });
    }
    if z.ncols() != theta_src.n_features() {
        return Err(Error::DimensionMismatch {
            what: "feature count",
            expected: theta_src.n_features(),
            found: z.ncols(),
        });
    }
    let m = z.nrows();
    if m == 0 {
        return Err(Error::EmptyData);
    }
    let k = theta_src.n_classes();
    let exec = opts.exec;
    let src_lik = penalised_log_joint(theta_src, z, exec)?;

    // log-likelihoods of the latest iterate, shared by gradient and objective
    let cache: RefCell<Option<(GaussianParams, DMatrix<f64>)>> = RefCell::new(None);
    let lik_of = |p: &GaussianParams| -> Result<DMatrix<f64>> {
        if let Some((cp, l)) = cache.borrow().as_ref() {
            if cp == p {
                return Ok(l.clone());
            }
        }
        let l = penalised_log_joint(p, z, exec)?;
        *cache.borrow_mut() = Some((p.clone(), l.clone()));
        Ok(l)
    };
    // (worst-case contrast, params, q, objective) of the safest iterate
    let safest: RefCell<Option<(f64, GaussianParams, SoftLabelMatrix, f64)>> = RefCell::new(None);

    let mut result = solve_saddle(
        |q: &SoftLabelMatrix, prev: Option<&GaussianParams>| {
            fit_da_warm(z, q, variant, lambda, prev)
        },
        |p: &GaussianParams| Ok((&src_lik - lik_of(p)?) / m as f64),
        |p: &GaussianParams, q: &SoftLabelMatrix| {
            let lt = lik_of(p)?;
            let value = weighted_nll(&lt, q.weights())? - weighted_nll(&src_lik, q.weights())?;
            let worst = vertex_contrast(&lt, &src_lik);
            let mut best = safest.borrow_mut();
            if best.as_ref().is_none_or(|b| worst < b.0) {
                *best = Some((worst, p.clone(), q.clone(), value));
            }
            Ok(value)
        },
        m,
        k,
        opts,
    )?;

    let (worst, params, q, value) = safest.into_inner().expect("objective evaluated at least once");
    result.q_star = q;
    if worst > 0.0 {
        // no iterate is certified; the source itself has zero contrast
        result.params = theta_src.clone();
        result.objective = 0.0;
        result.worst_case_contrast = Some(0.0);
    } else {
        result.params = params;
        result.objective = value;
        result.worst_case_contrast = Some(worst);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::one_hot;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn duplicated_points_floor_at_lambda() {
        let x = col(&[0., 0., 2., 2.]);
        let y = one_hot(&[1, 1, 2, 2], 2).unwrap();
        let p = fit_da(&x, &y, DaVariant::Qda, 0.5).unwrap();
        assert!((p.priors[0] - 0.5).abs() < 1e-15 && (p.priors[1] - 0.5).abs() < 1e-15);
        assert!(p.means[(0, 0)].abs() < 1e-15 && (p.means[(1, 0)] - 2.0).abs() < 1e-15);
        for k in 0..2 {
            assert!((p.covariance(k)[(0, 0)] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_labels_share_global_mean() {
        let x = DMatrix::from_row_slice(4, 2, &[1., 2., 3., -1., 0., 0., 4., 7.]);
        let q = SoftLabelMatrix::uniform(4, 3);
        let p = fit_da(&x, &q, DaVariant::Qda, 0.0).unwrap();
        let mean = x.row_mean();
        for k in 0..3 {
            assert!((p.means.row(k) - &mean).abs().max() < 1e-14);
        }
    }

    #[test]
    fn regularize_cases() {
        let s = DMatrix::from_row_slice(2, 2, &[2., 0., 0., -1.]);
        let r = regularize_cov(&s, 0.1);
        let expect = DMatrix::from_row_slice(2, 2, &[2.1, 0., 0., 0.1]);
        assert!((r - expect).abs().max() < 1e-14);
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((regularize_cov(&i, 0.0) - &i).abs().max() < 1e-15);
    }

    #[test]
    fn risk_standard_normal() {
        let p = GaussianParams {
            variant: DaVariant::Qda,
            priors: DVector::from_vec(vec![1.0]),
            means: DMatrix::zeros(1, 1),
            covariances: vec![DMatrix::identity(1, 1)],
            lambda: 0.0,
        };
        let q = DMatrix::from_element(1, 1, 1.0);
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        assert!((da_risk(&p, &col(&[0.0]), &q).unwrap() - half_log_2pi).abs() < 1e-15);
        assert!((da_risk(&p, &col(&[1.0]), &q).unwrap() - half_log_2pi - 0.5).abs() < 1e-15);
        assert!((half_log_2pi - 0.9189).abs() < 1e-4);
    }

    #[test]
    fn lda_shares_covariance() {
        let x = DMatrix::from_row_slice(6, 2, &[0., 0., 1., 0.3, 0., 1., 3., 3., 4., 2.5, 3., 5.]);
        let y = one_hot(&[1, 1, 1, 2, 2, 2], 2).unwrap();
        let p = fit_da(&x, &y, DaVariant::Lda, 0.0).unwrap();
        assert_eq!(p.covariances.len(), 1);
        assert_eq!(p.covariance(0), p.covariance(1));
    }

    #[test]
    fn degenerate_class_stays_finite() {
        let x = DMatrix::from_row_slice(3, 2, &[0., 0., 1., 0.3, 0., 1.]);
        let y = one_hot(&[1, 1, 1], 2).unwrap();
        for v in [DaVariant::Lda, DaVariant::Qda] {
            let p = fit_da(&x, &y, v, 0.0).unwrap();
            assert!((p.priors.sum() - 1.0).abs() < 1e-12);
            assert!(p.priors[1] > 0.0 && p.priors[1] < 1e-9);
            let r = da_risk(&p, &x, &y).unwrap();
            assert!(r.is_finite());
        }
    }

    #[test]
    fn degenerate_class_keeps_previous_mean() {
        let x = DMatrix::from_row_slice(3, 1, &[0., 1., 2.]);
        let y = one_hot(&[1, 1, 1], 2).unwrap();
        let mut prev = fit_da(&x, &y, DaVariant::Qda, 0.1).unwrap();
        prev.means[(1, 0)] = 42.0;
        let p = fit_da_warm(&x, &y, DaVariant::Qda, 0.1, Some(&prev)).unwrap();
        assert_eq!(p.means[(1, 0)], 42.0);
        assert!((p.covariance(1)[(0, 0)] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_prior_is_dominated() {
        let p = GaussianParams {
            variant: DaVariant::Lda,
            priors: DVector::from_vec(vec![1.0, 0.0]),
            means: DMatrix::from_row_slice(2, 1, &[0., 5.]),
            covariances: vec![DMatrix::identity(1, 1)],
            lambda: 0.0,
        };
        let z = col(&[-3., 0., 5., 20.]);
        let s = p.predict(&z).unwrap();
        for j in 0..4 {
            assert!(s[(j, 0)] > s[(j, 1)]);
        }
    }

    #[test]
    fn equidistant_point_ties() {
        let p = GaussianParams {
            variant: DaVariant::Qda,
            priors: DVector::from_vec(vec![0.5, 0.5]),
            means: DMatrix::from_row_slice(2, 1, &[-1., 1.]),
            covariances: vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
            lambda: 0.0,
        };
        let s = p.predict(&col(&[0.0])).unwrap();
        assert_eq!(s[(0, 0)], s[(0, 1)]);
    }

    #[test]
    fn identical_params_zero_contrast() {
        let x = DMatrix::from_row_slice(4, 1, &[0., 1., 2., 4.]);
        let y = one_hot(&[1, 1, 2, 2], 2).unwrap();
        let p = fit_da(&x, &y, DaVariant::Qda, 0.1).unwrap();
        assert_eq!(tcp_da_objective(&p, &p, &x, &y).unwrap(), 0.0);
        assert!(tcp_da_grad_q(&p, &p, &x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatches_rejected() {
        let x = DMatrix::from_row_slice(4, 1, &[0., 1., 2., 4.]);
        let y = one_hot(&[1, 1, 2, 2], 2).unwrap();
        let lda = fit_da(&x, &y, DaVariant::Lda, 0.1).unwrap();
        let qda = fit_da(&x, &y, DaVariant::Qda, 0.1).unwrap();
        assert!(matches!(
            tcp_da_objective(&lda, &qda, &x, &y),
            Err(Error::VariantMismatch(..))
        ));
        let opts = SolverOptions::default();
        assert!(matches!(
            fit_tcp_da(&lda, &x, DaVariant::Lda, 0.2, &opts),
            Err(Error::LambdaMismatch { .. })
        ));
    }

    #[test]
    fn not_positive_definite_reported() {
        let p = GaussianParams {
            variant: DaVariant::Qda,
            priors: DVector::from_vec(vec![0.5, 0.5]),
            means: DMatrix::zeros(2, 1),
            covariances: vec![DMatrix::identity(1, 1), DMatrix::from_element(1, 1, -1.0)],
            lambda: 0.0,
        };
        assert!(matches!(
            p.predict(&col(&[0.0])),
            Err(Error::NotPositiveDefinite { class: 2 })
        ));
    }
}
