//! Evaluation metrics and source / TCP / oracle risk reports.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::one_hot;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{ModelKind, ModelParams};

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::DimensionMismatch {
            what: "label count",
            expected: scores.len(),
            found: positive.len(),
        });
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the mid-rank of each tie group, kept integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j) as u128;
        let pos_in_group = order[i..j].iter().filter(|&&o| positive[o]).count() as u128;
        rank_sum2 += twice_mid * pos_in_group;
        i = j;
    }
    let p = n_pos as u128;
    let twice_u = rank_sum2 - p * (p + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Ranking score for class 2 against class 1: difference of the two score
/// columns (a monotone transform of the class-2 posterior for DA models).
pub fn binary_scores(scores: &DMatrix<f64>) -> Result<Vec<f64>> {
    if scores.ncols() != 2 {
        return Err(Error::DimensionMismatch {
            what: "class count",
            expected: 2,
            found: scores.ncols(),
        });
    }
    Ok(scores.row_iter().map(|r| r[1] - r[0]).collect())
}

fn rbf(a: nalgebra::DMatrixView<f64>, b: nalgebra::DMatrixView<f64>, gamma: f64) -> f64 {
    let mut d2 = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        d2 += (x - y) * (x - y);
    }
    (-d2 * gamma).exp()
}

fn kernel_sum(a: &DMatrix<f64>, b: &DMatrix<f64>, gamma: f64, exec: Execution) -> f64 {
    let rows = exec.map(a.nrows(), |i| {
        let ai = a.rows(i, 1);
        (0..b.nrows()).map(|j| rbf(ai, b.rows(j, 1), gamma)).sum::<f64>()
    });
    rows.iter().sum()
}

/// Biased empirical MMD² between the rows of `x` and `z` under the kernel
/// `exp(−‖a − b‖² / (2 bandwidth²))`.
pub fn mmd_rbf(x: &DMatrix<f64>, z: &DMatrix<f64>, bandwidth: f64) -> Result<f64> {
    mmd_rbf_with(x, z, bandwidth, Execution::default())
}

pub fn mmd_rbf_with(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    bandwidth: f64,
    exec: Execution,
) -> Result<f64> {
    if x.ncols() != z.ncols() {
        return Err(Error::DimensionMismatch {
            what: "feature count",
            expected: x.ncols(),
            found: z.ncols(),
        });
    }
    if x.nrows() == 0 || z.nrows() == 0 {
        return Err(Error::EmptyData);
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidOption(format!("bandwidth must be > 0, got {bandwidth}")));
    }
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let (n, m) = (x.nrows() as f64, z.nrows() as f64);
    let xx = kernel_sum(x, x, gamma, exec) / (n * n);
    let zz = kernel_sum(z, z, gamma, exec) / (m * m);
    let xz = kernel_sum(x, z, gamma, exec) / (n * m);
    Ok(xx - 2.0 * xz + zz)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    pub dataset: String,
    pub source: String,
    pub target: String,
    pub model: ModelKind,
    /// Repeat index, `mean` for an average row, empty when not repeated.
    pub repeat: String,
    pub lambda: f64,
    pub source_risk: f64,
    pub tcp_risk: f64,
    pub oracle_risk: f64,
    /// AUC of the TCP classifier; `None` unless there are exactly two classes
    /// and both appear in the target labels.
    pub auc: Option<f64>,
    pub source_auc: Option<f64>,
    pub oracle_auc: Option<f64>,
    pub mmd: Option<f64>,
    pub tcp_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// The three risks a source, TCP and oracle model attain on the labeled target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskTriple {
    pub source: f64,
    pub tcp: f64,
    pub oracle: f64,
    pub source_auc: Option<f64>,
    pub tcp_auc: Option<f64>,
    pub oracle_auc: Option<f64>,
}

/// Evaluates the source, TCP and oracle parameters on `z` with its true
/// labels `u` (values in `1..=K`).
pub fn target_risk_report(
    source: &ModelParams,
    tcp: &ModelParams,
    oracle: &ModelParams,
    z: &DMatrix<f64>,
    u: &[usize],
) -> Result<RiskTriple> {
    let kind = source.kind();
    for p in [tcp, oracle] {
        if p.kind() != kind {
            return Err(Error::VariantMismatch(kind.to_string(), p.kind().to_string()));
        }
    }
    let k = source.n_classes();
    let y = one_hot(u, k)?;
    let positive: Vec<bool> = u.iter().map(|&l| l == 2).collect();
    let auc_of = |p: &ModelParams| -> Result<Option<f64>> {
        if k != 2 {
            return Ok(None);
        }
        match auc(&binary_scores(&p.scores(z)?)?, &positive) {
            Ok(a) => Ok(Some(a)),
            Err(Error::SingleClass) => Ok(None),
            Err(e) => Err(e),
        }
    };
    Ok(RiskTriple {
        source: source.risk(z, &y)?,
        tcp: tcp.risk(z, &y)?,
        oracle: oracle.risk(z, &y)?,
        source_auc: auc_of(source)?,
        tcp_auc: auc_of(tcp)?,
        oracle_auc: auc_of(oracle)?,
    })
}

pub const REPORT_HEADER: &str = "dataset,source,target,model,source_risk,tcp_risk,oracle_risk,auc,\
source_auc,oracle_auc,lambda,repeat,mmd,tcp_objective,iterations,converged";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes reports as CSV. `comment` lines are emitted first, each prefixed
/// with `# `; the first should identify the format version.
pub fn write_reports_csv<W: Write>(reports: &[RiskReport], comment: &[String], mut out: W) -> Result<()> {
    for c in comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "{REPORT_HEADER}")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.dataset,
            r.source,
            r.target,
            r.model,
            r.source_risk,
            r.tcp_risk,
            r.oracle_risk,
            opt(r.auc),
            opt(r.source_auc),
            opt(r.oracle_auc),
            r.lambda,
            r.repeat,
            opt(r.mmd),
            r.tcp_objective,
            r.iterations,
            r.converged,
        )?;
    }
    Ok(())
}

pub fn write_reports_json<W: Write>(
    reports: &[RiskReport],
    meta: serde_json::Value,
    mut out: W,
) -> Result<()> {
    let doc = serde_json::json!({ "meta": meta, "reports": reports });
    serde_json::to_writer_pretty(&mut out, &doc)?;
    writeln!(out)?;
    Ok(())
}
