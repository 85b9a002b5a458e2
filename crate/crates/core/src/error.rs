use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report. `code()` gives the stable
/// machine-readable name used by the CLI and the run manifest.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("cohort has no rows")]
    EmptyCohort,
    #[error("outcome column `{column}` missing or blank (row {row:?})")]
    OutcomeMissing { column: String, row: Option<usize> },
    #[error("class {class} has {count} members, need at least {needed}")]
    DegenerateClass { class: u8, count: usize, needed: usize },

    #[error("copula correlation matrix is not positive semi-definite (pivot {pivot:.3e} at `{variable}`)")]
    InvalidCopula { variable: String, pivot: f64 },
    #[error("inconsistent cohort spec: {0}")]
    InconsistentSpec(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("degenerate contingency table: {0}")]
    DegenerateTable(String),

    #[error("category label `{label}` already used by column `{column}`")]
    LabelCollision { column: String, label: String },
    #[error("column `{0}` is missing in every row")]
    NoSignal(String),

    #[error("feature matrix is not centered: column `{column}` has mean {mean:.3e}")]
    NotStandardized { column: String, mean: f64 },
    #[error("fold {fold} contains a single class")]
    SingleClassFold { fold: usize },
    #[error("no coefficient exceeds threshold {threshold}")]
    EmptySelection { threshold: f64 },

    #[error("too few minority rows ({minority}) for k = {k}")]
    TooFewMinority { minority: usize, k: usize },

    #[error("{model} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { model: &'static str, iterations: usize, residual: f64 },
    #[error("kernel matrix is degenerate: all rows identical")]
    DegenerateKernel,
    #[error("model expects {expected} features, got {got}")]
    ManifestMismatch { expected: usize, got: usize },
    #[error("labels contain a single class")]
    SingleClass,

    #[error("bootstrap produced too many single-class resamples ({redraws} redraws)")]
    DegenerateBootstrap { redraws: usize },

    #[error("exact Shapley enumeration supports at most {max} features, got {got}")]
    TooManyFeatures { max: usize, got: usize },
    #[error("kernel SHAP needs at least {needed} coalitions, got {got}")]
    InsufficientCoalitions { needed: usize, got: usize },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("plan version {found} is not supported (expected {expected})")]
    PlanVersionMismatch { found: u32, expected: u32 },

    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, #[source] source: Box<Error> },

    #[error("i/o error on {path:?}: {source}")]
    Io { path: PathBuf, #[source] source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::SchemaMismatch(_) => "SchemaMismatch",
            Error::EmptyCohort => "EmptyCohort",
            Error::OutcomeMissing { .. } => "OutcomeMissing",
            Error::DegenerateClass { .. } => "DegenerateClass",
            Error::InvalidCopula { .. } => "InvalidCopula",
            Error::InconsistentSpec(_) => "InconsistentSpec",
            Error::DegenerateSample(_) => "DegenerateSample",
            Error::DegenerateTable(_) => "DegenerateTable",
            Error::LabelCollision { .. } => "LabelCollision",
            Error::NoSignal(_) => "NoSignal",
            Error::NotStandardized { .. } => "NotStandardized",
            Error::SingleClassFold { .. } => "SingleClassFold",
            Error::EmptySelection { .. } => "EmptySelection",
            Error::TooFewMinority { .. } => "TooFewMinority",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::DegenerateKernel => "DegenerateKernel",
            Error::ManifestMismatch { .. } => "ManifestMismatch",
            Error::SingleClass => "SingleClass",
            Error::DegenerateBootstrap { .. } => "DegenerateBootstrap",
            Error::TooManyFeatures { .. } => "TooManyFeatures",
            Error::InsufficientCoalitions { .. } => "InsufficientCoalitions",
            Error::UnknownFeature(_) => "UnknownFeature",
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::PlanVersionMismatch { .. } => "PlanVersionMismatch",
            Error::Stage { source, .. } => source.code(),
            Error::Io { .. } => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage: stage.to_string(), source: Box::new(e) },
        }
    }
}
