//! Experiment drivers: cross-validated λ selection, the sample-selection-bias
//! experiment and the pairwise-domain experiment.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bias::{sample_biased, BiasSampleSpec};
use crate::data::{one_hot, Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::eval::{mmd_rbf_with, target_risk_report, RiskReport};
use crate::exec::Execution;
use crate::model::{ModelKind, ModelParams};
use crate::saddle::{SolverOptions, StepSchedule};

pub const DEFAULT_LAMBDA_GRID: [f64; 11] =
    [0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0];
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_N_SOURCE: usize = 50;
/// Stratified fold assignments are redrawn at most this many times.
pub const MAX_FOLD_ATTEMPTS: usize = 100;

const FORMAT_VERSION: &str = "tcp-adapt v1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub lambda_grid: Vec<f64>,
    /// Skips cross-validation when set.
    pub fixed_lambda: Option<f64>,
    pub cv_folds: usize,
    pub n_source: usize,
    pub rng_seed: u64,
    pub repeats: usize,
    pub standardize: bool,
    pub solver: SolverOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Lda,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            fixed_lambda: None,
            cv_folds: DEFAULT_FOLDS,
            n_source: DEFAULT_N_SOURCE,
            rng_seed: 0,
            repeats: 1,
            standardize: false,
            solver: SolverOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() && self.fixed_lambda.is_none() {
            return Err(Error::InvalidOption("lambda grid is empty".into()));
        }
        if let Some(bad) = self
            .lambda_grid
            .iter()
            .chain(self.fixed_lambda.iter())
            .find(|l| !(**l >= 0.0 && l.is_finite()))
        {
            return Err(Error::InvalidOption(format!("lambda must be >= 0, got {bad}")));
        }
        if self.cv_folds < 2 {
            return Err(Error::InvalidOption("folds must be >= 2".into()));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidOption("repeats must be >= 1".into()));
        }
        self.solver.validate()
    }

    /// Comment lines recording everything needed to reproduce an output.
    pub fn header_lines(&self) -> Vec<String> {
        let grid: Vec<String> = self.lambda_grid.iter().map(|l| l.to_string()).collect();
        let s = &self.solver;
        let schedule = match s.schedule {
            StepSchedule::InverseT => "inverse_t",
            StepSchedule::InverseSqrtT => "inverse_sqrt_t",
        };
        vec![
            FORMAT_VERSION.to_string(),
            format!(
                "seed={} model={} repeats={} n_source={} folds={} lambda_grid={} fixed_lambda={} standardize={}",
                self.rng_seed,
                self.model,
                self.repeats,
                self.n_source,
                self.cv_folds,
                grid.join(";"),
                self.fixed_lambda.map_or_else(|| "none".to_string(), |l| l.to_string()),
                self.standardize,
            ),
            format!(
                "solver alpha0={} schedule={} epsilon={} max_iter={} per_sample_step={}",
                s.alpha0, schedule, s.epsilon, s.max_iter, s.per_sample_step
            ),
        ]
    }

    pub fn meta_json(&self) -> serde_json::Value {
        serde_json::json!({ "format": FORMAT_VERSION, "config": self })
    }
}

/// Independent seed for one `(repeat, purpose)` pair.
pub fn derive_seed(seed: u64, repeat: usize, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((repeat as u64) << 8) | purpose);
    rng.next_u64()
}

const PURPOSE_SAMPLE: u64 = 1;
const PURPOSE_FOLDS: u64 = 2;

/// Fold index for every sample, stratified by class.
fn stratified_folds(labels: &[usize], k: usize, folds: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut assign = vec![0; labels.len()];
    let mut offset = 0;
    for c in 1..=k {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(rng);
        for (pos, &i) in members.iter().enumerate() {
            assign[i] = (offset + pos) % folds;
        }
        offset += members.len();
    }
    assign
}

/// Picks the λ with the smallest mean held-out risk under stratified k-fold
/// cross-validation on labeled source data. Ties go to the smaller λ.
pub fn crossval_lambda(
    x: &DMatrix<f64>,
    labels: &[usize],
    n_classes: usize,
    model: ModelKind,
    grid: &[f64],
    folds: usize,
    rng_seed: u64,
) -> Result<f64> {
    match grid {
        [] => return Err(Error::InvalidOption("lambda grid is empty".into())),
        [only] => return Ok(*only),
        _ => {}
    }
    if folds < 2 || folds > labels.len() {
        return Err(Error::InvalidOption(format!(
            "folds must be in 2..={}, got {folds}",
            labels.len()
        )));
    }
    let mut present = vec![false; n_classes];
    for &l in labels {
        present[l - 1] = true;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut assign = None;
    for _ in 0..MAX_FOLD_ATTEMPTS {
        let a = stratified_folds(labels, n_classes, folds, &mut rng);
        let complete = (0..folds).all(|f| {
            let mut seen = vec![false; n_classes];
            for (i, &l) in labels.iter().enumerate() {
                if a[i] != f {
                    seen[l - 1] = true;
                }
            }
            seen == present
        });
        if complete {
            assign = Some(a);
            break;
        }
    }
    let assign = assign.ok_or(Error::FoldsExhausted {
        attempts: MAX_FOLD_ATTEMPTS,
    })?;

    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..labels.len()).partition(|&i| assign[i] == f);
            (train, test)
        })
        .collect();

    let mut best = (f64::INFINITY, f64::INFINITY);
    for &lambda in grid {
        let mut total = 0.0;
        for (train, test) in &splits {
            let y_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let y_test: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
            let p = ModelParams::fit(
                model,
                &x.select_rows(train),
                &one_hot(&y_train, n_classes)?,
                lambda,
            )?;
            total += p.risk(&x.select_rows(test), &one_hot(&y_test, n_classes)?)?;
        }
        let mean = total / folds as f64;
        let mean = if mean.is_finite() { mean } else { f64::INFINITY };
        if mean < best.0 || (mean == best.0 && lambda < best.1) {
            best = (mean, lambda);
        }
    }
    if best.1.is_finite() {
        Ok(best.1)
    } else {
        // every candidate diverged; fall back to the smallest
        Ok(grid.iter().copied().fold(f64::INFINITY, f64::min))
    }
}

fn choose_lambda(config: &ExperimentConfig, x: &DMatrix<f64>, y: &[usize], k: usize, seed: u64) -> Result<f64> {
    match config.fixed_lambda {
        Some(l) => Ok(l),
        None => crossval_lambda(x, y, k, config.model, &config.lambda_grid, config.cv_folds, seed),
    }
}

/// Everything one source / target comparison produces.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub lambda: f64,
    pub source: ModelParams,
    pub tcp: crate::saddle::SaddleResult<ModelParams>,
    pub oracle: ModelParams,
}

/// Fits source, TCP and oracle models. The TCP fit sees only `z`; `u` is
/// used to fit the oracle and for evaluation.
#[allow(clippy::too_many_arguments)]
fn compare(
    config: &ExperimentConfig,
    x: &DMatrix<f64>,
    y: &[usize],
    z: &DMatrix<f64>,
    u: &[usize],
    k: usize,
    cv_seed: u64,
    labels: (&str, &str, &str, String),
    mmd: Option<f64>,
) -> Result<(RiskReport, Comparison)> {
    let lambda = choose_lambda(config, x, y, k, cv_seed)?;
    let source = ModelParams::fit(config.model, x, &one_hot(y, k)?, lambda)?;
    let tcp = source.fit_tcp(z, &config.solver)?;
    let oracle = ModelParams::fit(config.model, z, &one_hot(u, k)?, lambda)?;
    let t = target_risk_report(&source, &tcp.params, &oracle, z, u)?;
    let report = RiskReport {
        dataset: labels.0.to_string(),
        source: labels.1.to_string(),
        target: labels.2.to_string(),
        model: config.model,
        repeat: labels.3,
        lambda,
        source_risk: t.source,
        tcp_risk: t.tcp,
        oracle_risk: t.oracle,
        auc: t.tcp_auc,
        source_auc: t.source_auc,
        oracle_auc: t.oracle_auc,
        mmd,
        tcp_objective: tcp.objective,
        iterations: tcp.iterations,
        converged: tcp.converged,
    };
    Ok((
        report,
        Comparison {
            lambda,
            source,
            tcp,
            oracle,
        },
    ))
}

/// Draws `repeats` biased source samples of size `n_source` from `data`,
/// treats the whole of `data` as the unlabeled target and reports source,
/// TCP and oracle risks per repeat followed by a `mean` row.
///
/// Repeats run through `exec`; each owns seeds derived from
/// `(rng_seed, repeat)`, so the output does not depend on the execution mode.
pub fn run_ssb_experiment(
    config: &ExperimentConfig,
    data: &Dataset,
    exec: Execution,
) -> Result<Vec<RiskReport>> {
    config.validate()?;
    let u = data.labels()?;
    let k = data.n_classes;
    let z = if config.standardize {
        Standardizer::fit(&data.features).apply(&data.features)
    } else {
        data.features.clone()
    };

    let rows = exec.try_map(config.repeats, |r| {
        let spec = BiasSampleSpec {
            n_source: config.n_source,
            rng_seed: derive_seed(config.rng_seed, r, PURPOSE_SAMPLE),
        };
        let idx = sample_biased(data, &spec)?;
        let x = z.select_rows(&idx);
        let y: Vec<usize> = idx.iter().map(|&i| u[i]).collect();
        let (report, _) = compare(
            config,
            &x,
            &y,
            &z,
            u,
            k,
            derive_seed(config.rng_seed, r, PURPOSE_FOLDS),
            (&data.name, "biased", "all", r.to_string()),
            None,
        )?;
        Ok::<_, Error>(report)
    })?;

    let mut out = rows.clone();
    out.push(mean_row(&rows));
    Ok(out)
}

fn mean_row(rows: &[RiskReport]) -> RiskReport {
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&RiskReport) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let mean_opt = |f: &dyn Fn(&RiskReport) -> Option<f64>| {
        rows.iter()
            .map(f)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n)
    };
    let first = &rows[0];
    RiskReport {
        dataset: first.dataset.clone(),
        source: first.source.clone(),
        target: first.target.clone(),
        model: first.model,
        repeat: "mean".to_string(),
        lambda: mean(&|r| r.lambda),
        source_risk: mean(&|r| r.source_risk),
        tcp_risk: mean(&|r| r.tcp_risk),
        oracle_risk: mean(&|r| r.oracle_risk),
        auc: mean_opt(&|r| r.auc),
        source_auc: mean_opt(&|r| r.source_auc),
        oracle_auc: mean_opt(&|r| r.oracle_auc),
        mmd: mean_opt(&|r| r.mmd),
        tcp_objective: mean(&|r| r.tcp_objective),
        iterations: rows.iter().map(|r| r.iterations).max().unwrap_or(0),
        converged: rows.iter().all(|r| r.converged),
    }
}

fn check_schema(source: &Dataset, target: &Dataset) -> Result<()> {
    if source.n_features() != target.n_features() {
        return Err(Error::DimensionMismatch {
            what: "feature count",
            expected: source.n_features(),
            found: target.n_features(),
        });
    }
    if source.n_classes != target.n_classes {
        return Err(Error::DimensionMismatch {
            what: "class count",
            expected: source.n_classes,
            found: target.n_classes,
        });
    }
    Ok(())
}

/// Source model on all of `source`, TCP on the unlabeled `target`, oracle on
/// the labeled `target`, plus the RBF MMD (bandwidth 1) between the domains.
pub fn run_da_experiment(
    config: &ExperimentConfig,
    source: &Dataset,
    target: &Dataset,
) -> Result<(RiskReport, Comparison)> {
    config.validate()?;
    check_schema(source, target)?;
    let (x, z) = if config.standardize {
        let s = Standardizer::fit(&source.features);
        (s.apply(&source.features), s.apply(&target.features))
    } else {
        (source.features.clone(), target.features.clone())
    };
    let mmd = mmd_rbf_with(&x, &z, 1.0, config.solver.exec)?;
    compare(
        config,
        &x,
        source.labels()?,
        &z,
        target.labels()?,
        source.n_classes,
        derive_seed(config.rng_seed, 0, PURPOSE_FOLDS),
        ("domains", &source.name, &target.name, String::new()),
        Some(mmd),
    )
}

/// [`run_da_experiment`] over every ordered pair of distinct domains.
pub fn run_domain_pairs(
    config: &ExperimentConfig,
    domains: &[Dataset],
    exec: Execution,
) -> Result<Vec<RiskReport>> {
    let pairs: Vec<(usize, usize)> = (0..domains.len())
        .flat_map(|s| (0..domains.len()).filter(move |&t| t != s).map(move |t| (s, t)))
        .collect();
    exec.try_map(pairs.len(), |p| {
        let (s, t) = pairs[p];
        run_da_experiment(config, &domains[s], &domains[t]).map(|(r, _)| r)
    })
}
