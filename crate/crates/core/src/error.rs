use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid anchor set: {0}")]
    InvalidAnchors(String),

    #[error("numerical degeneracy at row {row}: {reason}")]
    Degenerate { row: usize, reason: String },

    #[error("enumeration needs {terms} terms, cap is {cap}")]
    EnumerationTooLarge { terms: f64, cap: usize },

    #[error("infeasible anchor budget: {requested} anchors requested from {available} rows")]
    InfeasibleBudget { requested: usize, available: usize },

    #[error("weight MAP undefined for component {component}: expected count {count} < 1 - alpha")]
    WeightMapUndefined { component: usize, count: f64 },

    #[error("all {} EM starts failed: {}", .diagnostics.len(), .diagnostics.join("; "))]
    AllStartsFailed { diagnostics: Vec<String> },

    #[error("{k}! relabelings exceed the permutation cap {cap}")]
    FactorialCap { k: usize, cap: usize },

    #[error("chain {chain} failed at iteration {iteration}: {reason}")]
    ChainFailure { chain: usize, iteration: usize, reason: String },

    #[error("degenerate series in trial {trial}: {reason}")]
    DegenerateSeries { trial: String, reason: String },

    #[error("parse error at row {row}, column {column}: {reason}")]
    Parse { row: usize, column: String, reason: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("exhaustive anchor search too large: {0}")]
    SearchTooLarge(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numbers rather than the inputs' shape.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Degenerate { .. }
                | Error::AllStartsFailed { .. }
                | Error::ChainFailure { .. }
                | Error::WeightMapUndefined { .. }
        )
    }
}
