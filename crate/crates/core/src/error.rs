use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("line {line}: expected {expected} columns, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}, column {column}: cannot parse {value:?} as a number")]
    Parse {
        line: usize,
        column: usize,
        value: String,
    },

    #[error("label column {0:?} not found")]
    MissingLabelColumn(String),

    #[error("label {label} at index {index} is outside 1..={classes}")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("dataset is empty")]
    EmptyData,

    #[error("dataset has no labels")]
    Unlabeled,

    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("model variants differ: {0} vs {1}")]
    VariantMismatch(String, String),

    #[error("regularization differs between source ({source_lambda}) and target ({target_lambda}) fits")]
    LambdaMismatch {
        source_lambda: f64,
        target_lambda: f64,
    },

    #[error("covariance matrix of class {class} is not positive definite")]
    NotPositiveDefinite { class: usize },

    #[error("non-finite objective {value} at iteration {iteration}")]
    NonFinite { iteration: usize, value: f64 },

    #[error("class {class} quota {quota} exceeds its {available} samples")]
    QuotaExceedsClass {
        class: usize,
        quota: usize,
        available: usize,
    },

    #[error("pooled covariance is singular")]
    SingularCovariance,

    #[error("both classes must be present")]
    SingleClass,

    #[error("could not draw folds containing every class after {attempts} attempts")]
    FoldsExhausted { attempts: usize },

    #[error("invalid option: {0}")]
    InvalidOption(String),
}
