use thiserror::Error;

use crate::optim::SolveStatus;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("polytope is not a C-set: {0}")]
    NotCSet(String),

    #[error("point lies outside the gauge domain (gauge {0} > 1)")]
    OutsideDomain(f64),

    #[error("polytope is unbounded")]
    Unbounded,

    #[error("set is empty: {0}")]
    Empty(String),

    #[error("{context}: solver returned {status:?}")]
    Solver {
        status: SolveStatus,
        context: String,
    },

    #[error("no affine phase one policy exists (best max-violation {best:.3e} >= 0)")]
    PhaseOneInfeasible { best: f64 },

    #[error("phase one point is not strictly interior (margin {0:.3e})")]
    MarginViolation(f64),

    #[error("sampling acceptance rate {0:.2e} is below the guard threshold")]
    ThinSet(f64),

    #[error("training loss became non-finite at iteration {0}")]
    Diverged(usize),

    #[error("policy output left the feasible set by {0:.3e}")]
    SafetyViolation(f64),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn solver(status: SolveStatus, context: impl Into<String>) -> Self {
        Error::Solver {
            status,
            context: context.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
