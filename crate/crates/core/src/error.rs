use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("symmetry violation in {table}: weight at {x:?} differs from weight at {y:?}")]
    SymmetryViolation { table: String, x: Vec<i64>, y: Vec<i64> },

    #[error("first-order table is inconsistent with z*D(k): {0}")]
    InconsistentFirstOrder(String),

    #[error("model order {order} is insufficient: step n={n} needs coefficient m={}", n + 1)]
    Truncation { n: usize, order: usize },

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("m-sum tail bound {bound:e} exceeds tolerance {tol:e} at M_max={m_max}")]
    TailTooLarge { bound: f64, tol: f64, m_max: usize },

    #[error("ratio breakdown: |f_{n}(k)| = {value:e} is too small to divide by")]
    RatioBreakdown { n: usize, value: f64 },

    #[error("degenerate factor: 1 + r_{i}(0) = {value:e}")]
    DegenerateFactor { i: usize, value: f64 },

    #[error("no sign change of 1 - z - G(z) on [{lo}, {hi}]")]
    Bracket { lo: f64, hi: f64 },

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("incomplete trace: {0}")]
    IncompleteTrace(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: &'static str, source: Box<Error> },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
