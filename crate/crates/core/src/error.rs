use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GssError>;

/// Errors surfaced by the engine. The variants map onto three broad classes
/// (usage, data, numeric) through [`GssError::class`], which the CLI turns
/// into exit codes.
#[derive(Debug, Error)]
pub enum GssError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {field} at node {node}")]
    NonFinite { field: String, node: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("node {node} out of range (node count {count})")]
    NodeOutOfRange { node: usize, count: usize },

    #[error("nodes {from} and {to} are not adjacent in the traversal view")]
    NotAdjacent { from: usize, to: usize },

    #[error("node {0} was not settled by the search")]
    Unsettled(usize),

    #[error("corpus is missing {0}")]
    MissingComponent(&'static str),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("rank-r bound inapplicable: lambda_r = {lambda_r} < epsilon = {epsilon}")]
    BoundInapplicable { lambda_r: f64, epsilon: f64 },

    #[error("zero-norm embedding at node {0}; cosine similarity undefined")]
    ZeroNorm(usize),

    #[error("negative sampling failed: {0}")]
    Sampling(String),

    #[error("invalid triple ({i}, {j}, {k}): {reason}")]
    InvalidTriple {
        i: usize,
        j: usize,
        k: usize,
        reason: &'static str,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("hierarchy does not match corpus (checksum {expected} vs {found})")]
    HierarchyMismatch { expected: String, found: String },

    #[error("infeasible fixture: {0}")]
    InfeasibleFixture(String),

    #[error("csv output failed: {0}")]
    Csv(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl GssError {
    pub fn class(&self) -> ErrorClass {
        match self {
            GssError::InvalidParameter(_)
            | GssError::NodeOutOfRange { .. }
            | GssError::InfeasibleFixture(_) => ErrorClass::Usage,
            GssError::Numeric(_)
            | GssError::Diverged { .. }
            | GssError::NonFinite { .. }
            | GssError::BoundInapplicable { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GssError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn mismatch(what: impl Into<String>, expected: usize, found: usize) -> Self {
        GssError::DimensionMismatch {
            what: what.into(),
            expected,
            found,
        }
    }
}
