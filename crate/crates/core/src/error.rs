//! Error types shared across the crate.

use std::fmt;

use thiserror::Error;

/// One cell- or column-level problem found while validating a dataset.
///
/// Validation collects every violation instead of stopping at the first, so a
/// single pass over a bad file reports all offending cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// 1-based line in the source file (header is line 1); `None` for
    /// column-level problems such as missing metadata.
    pub line: Option<usize>,
    /// Column name as it appears in the header, or a pseudo-name like `__pop`.
    pub column: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {}, column `{}`: {}", line, self.column, self.message),
            None => write!(f, "column `{}`: {}", self.column, self.message),
        }
    }
}

fn format_violations(violations: &[Violation]) -> String {
    let mut out = format!("{} violation(s)", violations.len());
    for v in violations {
        out.push_str("\n  - ");
        out.push_str(&v.to_string());
    }
    out
}

#[derive(Debug, Error)]
pub enum Error {
    /// The input table breaks one or more dataset invariants.
    #[error("invalid dataset: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    /// Scoring data does not match the schema a model was trained on.
    #[error("schema mismatch: {0}")]
    Schema(String),

    /// Matrix or vector dimensions disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A configuration value is out of its valid range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Numerical degeneracy (failed decomposition, non-finite values).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An iterative solver hit its sweep cap before reaching tolerance.
    #[error("{context}: no convergence after {sweeps} sweeps (stationarity gap {gap:.3e})")]
    NonConvergence { context: String, sweeps: usize, gap: f64 },

    /// A file could not be parsed; `detail` carries line/column context.
    #[error("malformed file `{path}`: {detail}")]
    Format { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    pub fn format(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
