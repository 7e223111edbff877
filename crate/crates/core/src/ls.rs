//! Least-squares classification and its TCP adaptation.
//!
//! The loss of a sample is `Σ_k (z̃ θ_k − q_k)²` where `z̃` is the feature row
//! with a trailing constant one. Parameters are stored as a `(D+1) × K`
//! matrix whose last row holds the intercepts.

use nalgebra::DMatrix;

use crate::data::{augment_bias, Labeling};
use crate::error::{Error, Result};
use crate::saddle::{solve_saddle, SaddleResult, SolverOptions};
use crate::simplex::SoftLabelMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub theta: DMatrix<f64>,
    /// Ridge penalty the parameters were fitted with.
    pub ridge: f64,
}

impl LinearParams {
    pub fn n_features(&self) -> usize {
        self.theta.nrows() - 1
    }

    pub fn n_classes(&self) -> usize {
        self.theta.ncols()
    }

    /// Class scores `z̃ θ_k`, one row per sample.
    pub fn scores(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_features(self, z)?;
        Ok(augment_bias(z) * &self.theta)
    }

    /// Predicted classes in `1..=K`.
    pub fn predict(&self, z: &DMatrix<f64>) -> Result<Vec<usize>> {
        let s = self.scores(z)?;
        Ok(crate::data::row_argmax(&s).into_iter().map(|k| k + 1).collect())
    }
}

fn check_features(p: &LinearParams, z: &DMatrix<f64>) -> Result<()> {
    if z.ncols() != p.n_features() {
        return Err(Error::DimensionMismatch {
            what: "feature count",
            expected: p.n_features(),
            found: z.ncols(),
        });
    }
    Ok(())
}

fn check_labels(z: &DMatrix<f64>, q: &DMatrix<f64>, k: usize) -> Result<()> {
    if q.nrows() != z.nrows() {
        return Err(Error::DimensionMismatch {
            what: "label rows",
            expected: z.nrows(),
            found: q.nrows(),
        });
    }
    if q.ncols() != k {
        return Err(Error::DimensionMismatch {
            what: "class count",
            expected: k,
            found: q.ncols(),
        });
    }
    Ok(())
}

/// Closed-form (ridge) least squares on the bias-augmented features.
///
/// With `ridge == 0` the minimum-norm solution is returned, so rank-deficient
/// designs (fewer samples than `D + 1`, collinear columns) are handled.
pub fn fit_ls(x: &DMatrix<f64>, y: &impl Labeling, ridge: f64) -> Result<LinearParams> {
    let y = y.weights();
    if y.nrows() != x.nrows() {
        return Err(Error::DimensionMismatch {
            what: "label rows",
            expected: x.nrows(),
            found: y.nrows(),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::EmptyData);
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidOption(format!("ridge must be >= 0, got {ridge}")));
    }
    let zt = augment_bias(x);
    let theta = if ridge > 0.0 {
        let p = zt.ncols();
        let gram = zt.transpose() * &zt + DMatrix::identity(p, p) * ridge;
        let rhs = zt.transpose() * y;
        match gram.clone().cholesky() {
            Some(c) => c.solve(&rhs),
            None => min_norm_solve(&gram, &rhs),
        }
    } else {
        min_norm_solve(&zt, y)
    };
    Ok(LinearParams { theta, ridge })
}

fn min_norm_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    svd.solve(b, tol).expect("both singular vector sets were computed")
}

/// Mean over samples of `Σ_k (z̃_j θ_k − q_kj)²`.
pub fn ls_risk(params: &LinearParams, z: &DMatrix<f64>, q: &impl Labeling) -> Result<f64> {
    let q = q.weights();
    check_labels(z, q, params.n_classes())?;
    let resid = params.scores(z)? - q;
    Ok(resid.norm_squared() / z.nrows() as f64)
}

fn check_pair(theta: &LinearParams, theta_src: &LinearParams) -> Result<()> {
    if theta.theta.shape() != theta_src.theta.shape() {
        return Err(Error::DimensionMismatch {
            what: "parameter rows",
            expected: theta_src.theta.nrows(),
            found: theta.theta.nrows(),
        });
    }
    Ok(())
}

/// TCP-LS risk: `ls_risk(θ) − ls_risk(θ_src)` under the labeling `q`.
pub fn tcp_ls_objective(
    theta: &LinearParams,
    theta_src: &LinearParams,
    z: &DMatrix<f64>,
    q: &impl Labeling,
) -> Result<f64> {
    check_pair(theta, theta_src)?;
    Ok(ls_risk(theta, z, q)? - ls_risk(theta_src, z, q)?)
}

/// Gradient of the TCP-LS risk in `q`: `(2/m)(z̃_j θ^S_k − z̃_j θ_k)`.
/// It does not depend on `q`.
pub fn tcp_ls_grad_q(
    theta: &LinearParams,
    theta_src: &LinearParams,
    z: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_pair(theta, theta_src)?;
    let diff = &theta_src.theta - &theta.theta;
    Ok(params_scores(&diff, z) * (2.0 / z.nrows() as f64))
}

fn params_scores(theta: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    augment_bias(z) * theta
}

/// Largest TCP-LS contrast over crisp (and hence soft) labelings, evaluated
/// exactly: the contrast is linear in each `q_j`, so its maximum sits on a
/// vertex of every simplex.
pub fn worst_case_contrast(
    theta: &LinearParams,
    theta_src: &LinearParams,
    z: &DMatrix<f64>,
) -> Result<f64> {
    check_pair(theta, theta_src)?;
    check_features(theta, z)?;
    let a = params_scores(&theta.theta, z);
    let b = params_scores(&theta_src.theta, z);
    Ok(vertex_contrast(&a, &b, z.nrows()))
}

fn vertex_contrast(a: &DMatrix<f64>, b: &DMatrix<f64>, m: usize) -> f64 {
    let mut total = 0.0;
    for j in 0..a.nrows() {
        let base: f64 = (0..a.ncols()).map(|k| a[(j, k)].powi(2) - b[(j, k)].powi(2)).sum();
        let best = (0..a.ncols())
            .map(|k| -2.0 * (a[(j, k)] - b[(j, k)]))
            .fold(f64::NEG_INFINITY, f64::max);
        // contrast at the vertex q_j = e_k, maximised over k
        total += base + best;
    }
    total / m as f64
}

/// Ridge-penalised contrast minimised by the inner step. Identical to
/// [`tcp_ls_objective`] when `ridge == 0`.
fn penalised_contrast(
    theta: &LinearParams,
    theta_src: &LinearParams,
    z: &DMatrix<f64>,
    q: &impl Labeling,
    ridge: f64,
) -> Result<f64> {
    let base = tcp_ls_objective(theta, theta_src, z, q)?;
    if ridge == 0.0 {
        return Ok(base);
    }
    let m = z.nrows() as f64;
    Ok(base + ridge / m * (theta.theta.norm_squared() - theta_src.theta.norm_squared()))
}

/// Fits the TCP-LS classifier on unlabeled target features `z`.
///
/// The inner step is [`fit_ls`] with `ridge` (use the source fit's penalty to
/// keep the guarantee). After the saddle iteration the returned parameters
/// are the point on the segment between the source parameters and the final
/// iterate with the smallest [`worst_case_contrast`], so the result is never
/// worse than the source classifier for any labeling of `z`.
pub fn fit_tcp_ls(
    theta_src: &LinearParams,
    z: &DMatrix<f64>,
    ridge: f64,
    opts: &SolverOptions,
) -> Result<SaddleResult<LinearParams>> {
    check_features(theta_src, z)?;
    let m = z.nrows();
    if m == 0 {
        return Err(Error::EmptyData);
    }
    let k = theta_src.n_classes();
    let mut result = solve_saddle(
        |q: &SoftLabelMatrix, _prev: Option<&LinearParams>| fit_ls(z, q, ridge),
        |p: &LinearParams| tcp_ls_grad_q(p, theta_src, z),
        |p: &LinearParams, q: &SoftLabelMatrix| penalised_contrast(p, theta_src, z, q, ridge),
        m,
        k,
        opts,
    )?;

    let safe = safest_on_segment(theta_src, &result.params, z)?;
    result.worst_case_contrast = Some(worst_case_contrast(&safe, theta_src, z)?);
    result.objective = penalised_contrast(&safe, theta_src, z, &result.q_star, ridge)?;
    result.params = safe;
    Ok(result)
}

/// Minimises the (convex) worst-case contrast along `θ_src + s (θ − θ_src)`, `s ∈ [0, 1]`.
fn safest_on_segment(
    theta_src: &LinearParams,
    theta: &LinearParams,
    z: &DMatrix<f64>,
) -> Result<LinearParams> {
    let a = params_scores(&theta.theta, z);
    let b = params_scores(&theta_src.theta, z);
    let m = z.nrows();
    let at = |s: f64| {
        let blend = &b + (&a - &b) * s;
        vertex_contrast(&blend, &b, m)
    };

    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (at(x1), at(x2));
    for _ in 0..80 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = at(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = at(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    let candidates = [(1.0, at(1.0)), (mid, at(mid)), (0.0, 0.0)];
    let (s, _) = candidates
        .into_iter()
        .fold((1.0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });

    let blended = if s == 1.0 {
        theta.theta.clone()
    } else if s == 0.0 {
        theta_src.theta.clone()
    } else {
        &theta_src.theta + (&theta.theta - &theta_src.theta) * s
    };
    Ok(LinearParams {
        theta: blended,
        ridge: theta.ridge,
    })
}
