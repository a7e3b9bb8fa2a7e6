use std::path::PathBuf;

use thiserror::Error;

use crate::lp::LpError;
use crate::sim::SlotDump;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data (config, trace, decision shape) failed a contract check.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("lp solver: {0}")]
    Lp(#[from] LpError),

    #[error("subproblem at slot {slot} has no feasible relaxation")]
    InfeasibleSubproblem { slot: usize },

    /// A decision failed the feasibility check after repair; carries the
    /// offending slot's full state.
    #[error("constraint violation at slot {}: worst violation {:.3e}", .0.slot, .0.report.worst_violation)]
    ConstraintViolation(Box<SlotDump>),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
