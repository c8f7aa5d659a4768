use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A point or set lies outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// An invalid numeric or structural parameter.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// A configured budget (enumeration cap, site count, path length) would be exceeded.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// The travel weight to the target vanished numerically.
    #[error("degenerate weight: {0}")]
    DegenerateWeight(String),

    /// A linear solve did not reach the required residual.
    #[error("solver failure: {0}")]
    Solver(String),

    /// Rejection sampling produced too few accepted episodes.
    #[error("infeasible sampling: {0}")]
    Feasibility(String),

    /// A hypothesis gate refused to run an experiment.
    #[error("assumption {assumption} not satisfied: {reason}")]
    Assumption { assumption: &'static str, reason: String },

    /// A config field failed validation.
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter { name, reason: reason.into() }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { field: field.into(), reason: reason.into() }
    }
}
