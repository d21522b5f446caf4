use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SeagleError>;

#[derive(Debug, Error)]
pub enum SeagleError {
    #[error("parameter `{name}` out of domain: {value}")]
    ParameterDomain { name: &'static str, value: f64 },

    #[error("{what} is not numerically positive definite")]
    Conditioning { what: &'static str },

    #[error(
        "covariate design is rank deficient at column {column} (|r_jj| / max |r_ii| = {ratio:.3e})"
    )]
    RankDeficient { column: usize, ratio: f64 },

    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("numerical failure in {context} at iteration {iteration} (tau = {tau:e}, sigma = {sigma:e})")]
    Numerical {
        context: &'static str,
        iteration: usize,
        tau: f64,
        sigma: f64,
    },

    #[error("dense oracle refuses n = {n} (limit {limit})")]
    OracleGuard { n: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("genotype generation failed: {0}")]
    Generation(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SeagleError {
    pub(crate) fn shape(what: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        SeagleError::Shape {
            what,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SeagleError::Io {
            path: path.into(),
            source,
        }
    }
}
