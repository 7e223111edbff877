//! Model-family dispatch and the JSON interchange format for parameters and
//! saddle results.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::da::{self, DaVariant, GaussianParams};
use crate::data::Labeling;
use crate::error::{Error, Result};
use crate::ls::{self, LinearParams};
use crate::saddle::{SaddleResult, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ls,
    Lda,
    Qda,
}

impl ModelKind {
    fn variant(self) -> Option<DaVariant> {
        match self {
            ModelKind::Ls => None,
            ModelKind::Lda => Some(DaVariant::Lda),
            ModelKind::Qda => Some(DaVariant::Qda),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Ls => "ls",
            ModelKind::Lda => "lda",
            ModelKind::Qda => "qda",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ls" => Ok(ModelKind::Ls),
            "lda" => Ok(ModelKind::Lda),
            "qda" => Ok(ModelKind::Qda),
            other => Err(Error::InvalidOption(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Linear(LinearParams),
    Gaussian(GaussianParams),
}

impl ModelParams {
    /// Fits the model on labeled data. `lambda` is the ridge penalty for
    /// least squares and the covariance regulariser for discriminant analysis.
    pub fn fit(
        kind: ModelKind,
        x: &DMatrix<f64>,
        y: &impl Labeling,
        lambda: f64,
    ) -> Result<Self> {
        Ok(match kind.variant() {
            None => ModelParams::Linear(ls::fit_ls(x, y, lambda)?),
            Some(v) => ModelParams::Gaussian(da::fit_da(x, y, v, lambda)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Linear(_) => ModelKind::Ls,
            ModelParams::Gaussian(g) => match g.variant {
                DaVariant::Lda => ModelKind::Lda,
                DaVariant::Qda => ModelKind::Qda,
            },
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            ModelParams::Linear(p) => p.ridge,
            ModelParams::Gaussian(g) => g.lambda,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            ModelParams::Linear(p) => p.n_classes(),
            ModelParams::Gaussian(g) => g.n_classes(),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            ModelParams::Linear(p) => p.n_features(),
            ModelParams::Gaussian(g) => g.n_features(),
        }
    }

    /// Mean squared error (LS) or average negative log-likelihood (DA).
    pub fn risk(&self, z: &DMatrix<f64>, q: &impl Labeling) -> Result<f64> {
        match self {
            ModelParams::Linear(p) => ls::ls_risk(p, z, q),
            ModelParams::Gaussian(g) => da::da_risk(g, z, q),
        }
    }

    /// `m × K` class scores; the prediction is the row-wise argmax.
    pub fn scores(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            ModelParams::Linear(p) => p.scores(z),
            ModelParams::Gaussian(g) => g.predict(z),
        }
    }

    /// TCP adaptation to the unlabeled `z`, with the source's own `lambda`.
    pub fn fit_tcp(&self, z: &DMatrix<f64>, opts: &SolverOptions) -> Result<SaddleResult<ModelParams>> {
        Ok(match self {
            ModelParams::Linear(p) => map_result(ls::fit_tcp_ls(p, z, p.ridge, opts)?, ModelParams::Linear),
            ModelParams::Gaussian(g) => map_result(
                da::fit_tcp_da(g, z, g.variant, g.lambda, opts)?,
                ModelParams::Gaussian,
            ),
        })
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(ParamsJson::from(self)).expect("parameters serialise")
    }

    pub fn from_json(value: Value) -> Result<Self> {
        let raw: ParamsJson = serde_json::from_value(value)?;
        raw.try_into()
    }
}

fn map_result<P, F: FnOnce(P) -> ModelParams>(r: SaddleResult<P>, f: F) -> SaddleResult<ModelParams> {
    SaddleResult {
        params: f(r.params),
        q_star: r.q_star,
        objective: r.objective,
        worst_case_contrast: r.worst_case_contrast,
        iterations: r.iterations,
        converged: r.converged,
        trace: r.trace,
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ParamsJson {
    Ls {
        theta: Vec<Vec<f64>>,
        #[serde(default)]
        ridge: f64,
    },
    Lda(GaussianJson),
    Qda(GaussianJson),
}

#[derive(Serialize, Deserialize)]
struct GaussianJson {
    priors: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<Vec<Vec<f64>>>,
    lambda: f64,
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn rows_matrix(rows: &[Vec<f64>], what: &'static str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            what,
            expected: d,
            found: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

impl From<&ModelParams> for ParamsJson {
    fn from(p: &ModelParams) -> Self {
        match p {
            ModelParams::Linear(l) => ParamsJson::Ls {
                theta: matrix_rows(&l.theta),
                ridge: l.ridge,
            },
            ModelParams::Gaussian(g) => {
                let body = GaussianJson {
                    priors: g.priors.iter().copied().collect(),
                    means: matrix_rows(&g.means),
                    covs: g.covariances.iter().map(matrix_rows).collect(),
                    lambda: g.lambda,
                };
                match g.variant {
                    DaVariant::Lda => ParamsJson::Lda(body),
                    DaVariant::Qda => ParamsJson::Qda(body),
                }
            }
        }
    }
}

impl TryFrom<ParamsJson> for ModelParams {
    type Error = Error;

    fn try_from(raw: ParamsJson) -> Result<Self> {
        let (variant, body) = match raw {
            ParamsJson::Ls { theta, ridge } => {
                let theta = rows_matrix(&theta, "theta row length")?;
                if theta.nrows() < 2 || theta.ncols() == 0 {
                    return Err(Error::InvalidOption("theta must be (D+1) x K".into()));
                }
                return Ok(ModelParams::Linear(LinearParams { theta, ridge }));
            }
            ParamsJson::Lda(b) => (DaVariant::Lda, b),
            ParamsJson::Qda(b) => (DaVariant::Qda, b),
        };
        let k = body.priors.len();
        let means = rows_matrix(&body.means, "mean length")?;
        if means.nrows() != k {
            return Err(Error::DimensionMismatch {
                what: "mean count",
                expected: k,
                found: means.nrows(),
            });
        }
        let expected_covs = if variant == DaVariant::Lda { 1 } else { k };
        if body.covs.len() != expected_covs {
            return Err(Error::DimensionMismatch {
                what: "covariance count",
                expected: expected_covs,
                found: body.covs.len(),
            });
        }
        let d = means.ncols();
        let covariances = body
            .covs
            .iter()
            .map(|c| {
                let m = rows_matrix(c, "covariance row length")?;
                if m.shape() != (d, d) {
                    return Err(Error::DimensionMismatch {
                        what: "covariance size",
                        expected: d,
                        found: m.nrows(),
                    });
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelParams::Gaussian(GaussianParams {
            variant,
            priors: DVector::from_vec(body.priors),
            means,
            covariances,
            lambda: body.lambda,
        }))
    }
}

/// JSON document for a saddle result: parameters, worst-case labeling and
/// solver diagnostics.
pub fn saddle_result_json(r: &SaddleResult<ModelParams>) -> Value {
    let mut v = json!({
        "params": r.params.to_json(),
        "q_star": matrix_rows(r.q_star.weights()),
        "objective": r.objective,
        "worst_case_contrast": r.worst_case_contrast,
        "iterations": r.iterations,
        "converged": r.converged,
    });
    if let Some(trace) = &r.trace {
        v["trace"] = serde_json::to_value(trace).expect("trace serialises");
    }
    v
}
