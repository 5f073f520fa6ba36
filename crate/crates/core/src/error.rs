use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Genealogy does not describe a single-rooted binary tree.
    #[error("invalid genealogy: {0}")]
    Structural(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Bad input data; coordinates are 0-based and refer to data rows/columns.
    #[error("data error{}: {message}", location(*row, *column))]
    Data {
        row: Option<usize>,
        column: Option<usize>,
        message: String,
    },

    #[error("merge time {merge_time} is later than child time {child_time}")]
    TimeOrder { merge_time: f64, child_time: f64 },

    #[error("non-positive local likelihood in dimension {dim}")]
    DegenerateLikelihood { dim: usize },

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("all particle weights vanished at iteration {iteration}")]
    Degeneracy { iteration: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("column {column} has no observed value to restore from")]
    Unrestorable { column: usize },

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn location(row: Option<usize>, column: Option<usize>) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!(" at row {r}, column {c}"),
        (Some(r), None) => format!(" at row {r}"),
        (None, Some(c)) => format!(" in column {c}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn data(row: Option<usize>, column: Option<usize>, message: impl Into<String>) -> Self {
        Error::Data {
            row,
            column,
            message: message.into(),
        }
    }

    /// Short stable token naming the error class, used in machine-readable output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Structural(_) => "structural",
            Error::Argument(_) => "argument",
            Error::Data { .. } => "data",
            Error::TimeOrder { .. } => "time-order",
            Error::DegenerateLikelihood { .. } => "degenerate-likelihood",
            Error::Solver(_) => "solver",
            Error::Degeneracy { .. } => "degeneracy",
            Error::Numeric(_) => "numeric",
            Error::Config(_) => "config",
            Error::UndefinedMetric(_) => "undefined-metric",
            Error::Unrestorable { .. } => "unrestorable",
            Error::Unsupported(_) => "unsupported-model",
            Error::Io(_) => "io",
            Error::Csv(_) => "ingestion",
        }
    }
}
