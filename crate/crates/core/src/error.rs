use thiserror::Error;

/// Errors produced while loading data or fitting/evaluating survival models.
#[derive(Debug, Error)]
pub enum SurvError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate column `{0}`: constant values cannot be standardized")]
    DegenerateColumn(String),

    #[error("split failed: {0}")]
    Split(String),

    #[error("no events in cohort: at least one observed event is required")]
    NoEvents,

    #[error("arity mismatch: expected {expected} columns, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("monotone likelihood: coefficients diverge ({0}); retry with ridge > 0")]
    MonotoneLikelihood(String),

    #[error("singular Hessian at the solution; retry with ridge > 0")]
    SingularHessian,

    #[error("training diverged at epoch {epoch} (loss is not finite); lower the learning rate")]
    Diverged { epoch: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SurvError>;
