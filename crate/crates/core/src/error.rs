use std::fmt;

use thiserror::Error;

/// Constraint family implicated by an infeasibility certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    TerminalMean,
    TerminalCovariance,
    Chance,
    HardInput,
    Objective,
    Other,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::TerminalMean => "terminal mean",
            Family::TerminalCovariance => "terminal covariance LMI",
            Family::Chance => "chance",
            Family::HardInput => "hard input",
            Family::Objective => "objective",
            Family::Other => "other",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{name} is not positive definite{}", index.map(|i| format!(" (index {i})")).unwrap_or_default())]
    NotPositiveDefinite { name: String, index: Option<usize> },
    #[error("{name} is not positive semidefinite{}", index.map(|i| format!(" (index {i})")).unwrap_or_default())]
    NotPositiveSemidefinite { name: String, index: Option<usize> },
    #[error("{what} out of range: {detail}")]
    OutOfRange { what: &'static str, detail: String },
    #[error("invalid risk allocation: {0}")]
    Allocation(String),
    #[error("invalid program: {0}")]
    Program(String),
    #[error("solver returned {status}{}", family.map(|f| format!(" (implicated: {f} constraints)")).unwrap_or_default())]
    Solve { status: crate::conic::SolveStatus, family: Option<Family> },
    #[error("first solve under the uniform allocation is infeasible: {0}")]
    FirstSolveInfeasible(Box<Error>),
    #[error("configuration error at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }
}
