use thiserror::Error;

use crate::experiments::SandwichReport;
use crate::model::TrainTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite {what}{}", sample.map(|i| format!(" at sample {i}")).unwrap_or_default())]
    NonFinite {
        what: &'static str,
        sample: Option<usize>,
    },

    /// Attention factor with `||z||_2 > 1`; the indicator part of theta is infinite.
    #[error("infeasible regularizer: {0}")]
    InfeasibleRegularizer(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("line search found no decrease after {halvings} halvings at iteration {iteration}")]
    StalledDescent {
        iteration: usize,
        halvings: usize,
        trace: Box<TrainTrace>,
    },

    #[error("sandwich inequality violated: lower {:.6e}, objective {:.6e}, upper {:.6e}", .0.convex_value, .0.objective, .0.upper)]
    SandwichViolated(Box<SandwichReport>),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error records and FFI status codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::NonFinite { .. } => "non-finite",
            Error::InfeasibleRegularizer(_) => "infeasible-regularizer",
            Error::Argument(_) => "argument",
            Error::Constraint(_) => "constraint",
            Error::StalledDescent { .. } => "stalled-descent",
            Error::SandwichViolated(_) => "sandwich-violated",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
