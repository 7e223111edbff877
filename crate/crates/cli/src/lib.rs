//! Command-line front end for `tcp-adapt`.
//!
//! [`run`] parses arguments, executes one subcommand and returns the exit
//! code: 0 on success, 1 for usage errors, 2 for data or numerical errors.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::json;

use tcp_adapt::bias::{sample_biased, write_indices_csv, BiasSampleSpec};
use tcp_adapt::data::{load_csv, one_hot, row_argmax, CsvOptions, Dataset, LabelColumn, Labeling};
use tcp_adapt::eval::{auc, binary_scores, mmd_rbf, write_reports_csv, write_reports_json, RiskReport};
use tcp_adapt::experiment::{
    crossval_lambda, run_domain_pairs, run_ssb_experiment, ExperimentConfig, DEFAULT_FOLDS,
    DEFAULT_LAMBDA_GRID, DEFAULT_N_SOURCE,
};
use tcp_adapt::model::{saddle_result_json, ModelKind, ModelParams};
use tcp_adapt::saddle::{write_trace_csv, SolverOptions, StepSchedule};
use tcp_adapt::{pca, Error, Execution};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "TCP_ADAPT_THREADS";

#[derive(Parser, Debug)]
#[command(name = "tcp-adapt", version, about = "Target contrastive pessimistic domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a sample-selection-biased source subset; writes row indices.
    SampleBias {
        data: PathBuf,
        #[command(flatten)]
        csv: CsvArgs,
        #[arg(long, default_value_t = DEFAULT_N_SOURCE)]
        n_source: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a model on labeled source data; writes parameter JSON.
    FitSource {
        data: PathBuf,
        #[command(flatten)]
        csv: CsvArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adapt source parameters to unlabeled target data; writes result JSON.
    FitTcp {
        /// Parameter JSON written by `fit-source`.
        params: PathBuf,
        target: PathBuf,
        #[command(flatten)]
        csv: CsvArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Write the solver trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write q* next to a 2-component PCA projection of the target as CSV.
        #[arg(long)]
        dump_q: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Risk, AUC and accuracy of parameters on labeled data.
    Evaluate {
        params: PathBuf,
        data: PathBuf,
        #[command(flatten)]
        csv: CsvArgs,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Biased-source experiment: source, TCP and oracle risks per repeat.
    ExperimentSsb {
        data: PathBuf,
        #[command(flatten)]
        csv: CsvArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = DEFAULT_N_SOURCE)]
        n_source: usize,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Every ordered pair of domains as source and target, with MMD.
    ExperimentDa {
        #[arg(required = true, num_args = 2..)]
        domains: Vec<PathBuf>,
        #[command(flatten)]
        csv: CsvArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Empirical MMD between two feature files (RBF kernel).
    Mmd {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        csv: CsvArgs,
        #[arg(long, default_value_t = 1.0)]
        bandwidth: f64,
    },
}

#[derive(Args, Debug)]
struct CsvArgs {
    /// The first row holds column names.
    #[arg(long)]
    header: bool,
    /// Label column: `last`, `none`, a 1-based column number, or a header name.
    /// Defaults to `last` for labeled inputs and `none` otherwise.
    #[arg(long)]
    label: Option<String>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ModelChoice::Lda)]
    model: ModelChoice,
    /// Comma-separated candidate regularisation values.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Use this λ and skip cross-validation.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standardise features (experiments only).
    #[arg(long)]
    standardize: bool,
}

#[derive(Args, Debug)]
struct SolverArgs {
    #[arg(long, default_value_t = 1.0)]
    alpha0: f64,
    #[arg(long, value_enum, default_value_t = ScheduleChoice::InverseT)]
    schedule: ScheduleChoice,
    #[arg(long, default_value_t = 1e-9)]
    epsilon: f64,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    /// Use `alpha0` on the mean gradient instead of per target sample.
    #[arg(long)]
    no_per_sample_step: bool,
    /// Run without worker threads.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModelChoice {
    Ls,
    Lda,
    Qda,
}

impl From<ModelChoice> for ModelKind {
    fn from(m: ModelChoice) -> Self {
        match m {
            ModelChoice::Ls => ModelKind::Ls,
            ModelChoice::Lda => ModelKind::Lda,
            ModelChoice::Qda => ModelKind::Qda,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ScheduleChoice {
    InverseT,
    InverseSqrtT,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Parses `argv` (including the program name) and runs the subcommand,
/// writing results to `stdout` unless `--out` is given.
pub fn run<I, S>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    configure_threads();
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e {
                Error::InvalidOption(_) => 1,
                _ => 2,
            }
        }
    }
}

#[cfg(feature = "parallel")]
fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

#[cfg(not(feature = "parallel"))]
fn configure_threads() {}

fn csv_options(args: &CsvArgs, labeled: bool) -> Result<CsvOptions, Error> {
    let spec = args.label.as_deref().unwrap_or(if labeled { "last" } else { "none" });
    let label_column = match spec {
        "none" => None,
        "last" => Some(LabelColumn::Last),
        s => match s.parse::<usize>() {
            Ok(0) => return Err(Error::InvalidOption("label column numbers start at 1".into())),
            Ok(n) => Some(LabelColumn::Index(n - 1)),
            Err(_) if args.header => Some(LabelColumn::Name(s.to_string())),
            Err(_) => {
                return Err(Error::InvalidOption(format!(
                    "label column `{s}` given by name requires --header"
                )))
            }
        },
    };
    if labeled && label_column.is_none() {
        return Err(Error::InvalidOption("this command needs a label column".into()));
    }
    Ok(CsvOptions {
        has_header: args.header,
        label_column,
        ..Default::default()
    })
}

fn solver_options(args: &SolverArgs) -> SolverOptions {
    SolverOptions {
        alpha0: args.alpha0,
        schedule: match args.schedule {
            ScheduleChoice::InverseT => StepSchedule::InverseT,
            ScheduleChoice::InverseSqrtT => StepSchedule::InverseSqrtT,
        },
        epsilon: args.epsilon,
        max_iter: args.max_iter,
        per_sample_step: !args.no_per_sample_step,
        exec: execution(args.sequential),
        ..Default::default()
    }
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn config(model: &ModelArgs, solver: &SolverArgs, n_source: usize, repeats: usize) -> ExperimentConfig {
    ExperimentConfig {
        model: model.model.into(),
        lambda_grid: model.lambda_grid.clone().unwrap_or_else(|| DEFAULT_LAMBDA_GRID.to_vec()),
        fixed_lambda: model.lambda,
        cv_folds: model.folds,
        n_source,
        rng_seed: model.seed,
        repeats,
        standardize: model.standardize,
        solver: solver_options(solver),
    }
}

/// Runs `f` against the `--out` file, or against stdout.
fn with_output(
    out: &Option<PathBuf>,
    stdout: &mut dyn Write,
    f: impl FnOnce(&mut dyn Write) -> Result<(), Error>,
) -> Result<(), Error> {
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            f(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => f(stdout),
    }
}

fn write_json(w: &mut dyn Write, v: &serde_json::Value) -> Result<(), Error> {
    serde_json::to_writer_pretty(&mut *w, v)?;
    writeln!(w)?;
    Ok(())
}

fn read_params(path: &Path) -> Result<ModelParams, Error> {
    let v: serde_json::Value = serde_json::from_reader(io::BufReader::new(File::open(path)?))?;
    ModelParams::from_json(v)
}

fn execute(cmd: Command, stdout: &mut dyn Write) -> Result<(), Error> {
    match cmd {
        Command::SampleBias {
            data,
            csv,
            n_source,
            seed,
            out,
        } => {
            let d = load_csv(&data, &csv_options(&csv, true)?)?;
            let idx = sample_biased(
                &d,
                &BiasSampleSpec {
                    n_source,
                    rng_seed: seed,
                },
            )?;
            with_output(&out, stdout, |w| {
                writeln!(w, "# tcp-adapt v1 seed={seed} n_source={n_source}")?;
                write_indices_csv(&idx, w)
            })
        }
        Command::FitSource {
            data,
            csv,
            model,
            out,
        } => {
            let d = load_csv(&data, &csv_options(&csv, true)?)?;
            let kind: ModelKind = model.model.into();
            let labels = d.labels()?;
            let lambda = match model.lambda {
                Some(l) => l,
                None => crossval_lambda(
                    &d.features,
                    labels,
                    d.n_classes,
                    kind,
                    model.lambda_grid.as_deref().unwrap_or(&DEFAULT_LAMBDA_GRID),
                    model.folds,
                    model.seed,
                )?,
            };
            let params = ModelParams::fit(kind, &d.features, &d.one_hot()?, lambda)?;
            let mut doc = params.to_json();
            doc["meta"] = json!({
                "format": "tcp-adapt v1",
                "seed": model.seed,
                "folds": model.folds,
                "lambda": lambda,
                "classes": d.class_values,
            });
            with_output(&out, stdout, |w| write_json(w, &doc))
        }
        Command::FitTcp {
            params,
            target,
            csv,
            solver,
            trace,
            dump_q,
            out,
        } => {
            let source = read_params(&params)?;
            let z = load_csv(&target, &csv_options(&csv, false)?)?;
            let mut opts = solver_options(&solver);
            opts.trace = trace.is_some();
            let result = source.fit_tcp(&z.features, &opts)?;
            if let (Some(path), Some(tr)) = (&trace, &result.trace) {
                write_trace_csv(tr, BufWriter::new(File::create(path)?))?;
            }
            if let Some(path) = &dump_q {
                write_dump_q(path, &z, result.q_star.weights())?;
            }
            let mut doc = saddle_result_json(&result);
            doc["solver"] = serde_json::to_value(&opts)?;
            with_output(&out, stdout, |w| write_json(w, &doc))
        }
        Command::Evaluate {
            params,
            data,
            csv,
            format,
            out,
        } => {
            let p = read_params(&params)?;
            let d = load_csv(&data, &csv_options(&csv, true)?)?;
            let labels = d.labels()?;
            let y = one_hot(labels, p.n_classes())?;
            let risk = p.risk(&d.features, &y)?;
            let scores = p.scores(&d.features)?;
            let predicted = row_argmax(&scores);
            let correct = predicted.iter().zip(labels).filter(|(p, l)| **p + 1 == **l).count();
            let accuracy = correct as f64 / labels.len() as f64;
            let auc_value = if p.n_classes() == 2 {
                let positive: Vec<bool> = labels.iter().map(|&l| l == 2).collect();
                match auc(&binary_scores(&scores)?, &positive) {
                    Ok(a) => Some(a),
                    Err(Error::SingleClass) => None,
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            with_output(&out, stdout, |w| match format {
                Format::Json => write_json(
                    w,
                    &json!({
                        "model": p.kind(),
                        "lambda": p.lambda(),
                        "n": labels.len(),
                        "risk": risk,
                        "auc": auc_value,
                        "accuracy": accuracy,
                    }),
                ),
                Format::Csv => {
                    writeln!(w, "# tcp-adapt v1")?;
                    writeln!(w, "model,lambda,n,risk,auc,accuracy")?;
                    writeln!(
                        w,
                        "{},{},{},{},{},{}",
                        p.kind(),
                        p.lambda(),
                        labels.len(),
                        risk,
                        auc_value.map_or_else(String::new, |a| a.to_string()),
                        accuracy
                    )?;
                    Ok(())
                }
            })
        }
        Command::ExperimentSsb {
            data,
            csv,
            model,
            solver,
            n_source,
            repeats,
            output,
        } => {
            let d = load_csv(&data, &csv_options(&csv, true)?)?;
            let cfg = config(&model, &solver, n_source, repeats);
            let rows = run_ssb_experiment(&cfg, &d, execution(solver.sequential))?;
            emit_reports(&cfg, &rows, &output, stdout)
        }
        Command::ExperimentDa {
            domains,
            csv,
            model,
            solver,
            output,
        } => {
            let opts = csv_options(&csv, true)?;
            let sets = domains
                .iter()
                .map(|p| load_csv(p, &opts))
                .collect::<Result<Vec<Dataset>, Error>>()?;
            let cfg = config(&model, &solver, 0, 1);
            let rows = run_domain_pairs(&cfg, &sets, execution(solver.sequential))?;
            emit_reports(&cfg, &rows, &output, stdout)
        }
        Command::Mmd { a, b, csv, bandwidth } => {
            let opts = csv_options(&csv, false)?;
            let x = load_csv(&a, &opts)?;
            let z = load_csv(&b, &opts)?;
            let v = mmd_rbf(&x.features, &z.features, bandwidth)?;
            writeln!(stdout, "{v:?}")?;
            Ok(())
        }
    }
}

fn emit_reports(
    cfg: &ExperimentConfig,
    rows: &[RiskReport],
    output: &OutputArgs,
    stdout: &mut dyn Write,
) -> Result<(), Error> {
    with_output(&output.out, stdout, |w| match output.format {
        Format::Csv => write_reports_csv(rows, &cfg.header_lines(), w),
        Format::Json => write_reports_json(rows, cfg.meta_json(), w),
    })
}

fn write_dump_q(path: &Path, z: &Dataset, q: &DMatrix<f64>) -> Result<(), Error> {
    let proj = pca::project(&z.features, 2);
    let mut w = BufWriter::new(File::create(path)?);
    let qcols: Vec<String> = (1..=q.ncols()).map(|k| format!("q{k}")).collect();
    writeln!(w, "pc1,pc2,{}", qcols.join(","))?;
    for j in 0..q.nrows() {
        let qs: Vec<String> = q.row(j).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{},{}", proj[(j, 0)], proj[(j, 1)], qs.join(","))?;
    }
    w.flush()?;
    Ok(())
}
