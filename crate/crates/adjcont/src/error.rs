use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("block name `{0}` is already registered")]
    DuplicateName(String),
    #[error("continuation parameter `{0}` is already registered")]
    DuplicateLabel(String),
    #[error("no block named `{0}`")]
    UnknownBlock(String),
    #[error("no continuation parameter labelled `{0}`")]
    UnknownLabel(String),
    #[error("block `{0}` already has adjoint contributions")]
    AdjointExists(String),
    #[error("index {index} out of range for a variable vector of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("non-finite value while evaluating block `{0}`")]
    Evaluation(String),
    #[error("singular matrix (pivot ratio {ratio:.3e})")]
    Singular { ratio: f64 },
    #[error("corrector did not converge in {iterations} iterations (|f| = {residual:.3e})")]
    MaxIter { iterations: usize, residual: f64 },
    #[error("{released} released parameters leave a solution manifold of dimension {dim}, expected 1")]
    Underdetermined { released: usize, dim: isize },
    #[error("tangency: transversality measure {0:.3e} is too small")]
    Tangency(f64),
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("label {0} not found in run")]
    MissingLabel(usize),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed run data: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            got,
        }
    }
}
