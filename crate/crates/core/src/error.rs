use thiserror::Error;

use crate::linalg::ConditionReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("axis pair ({a}, {b}) has extents {ea} != {eb}")]
    AxisMismatch {
        a: usize,
        b: usize,
        ea: usize,
        eb: usize,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("singular metric: numerical rank {} of {} (sigma_max {:.3e}, sigma_min {:.3e})", .0.rank, .0.dim, .0.sigma_max, .0.sigma_min)]
    SingularMetric(ConditionReport),

    #[error("MPS is not injective: dominant transfer eigenvalue gap ratio {gap_ratio:.6}")]
    NonInjective { gap_ratio: f64 },

    #[error("biorthogonality breakdown: |<L|R>| density {0:.3e}")]
    Biorthogonality(f64),

    #[error("state is not symmetric under {label}: dominant modulus {modulus:.8}")]
    NotSymmetric { label: String, modulus: f64 },

    #[error("state collapsed: all Schmidt weights vanished on bond {0}")]
    StateCollapse(usize),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn unknown(kind: &'static str, name: impl Into<String>) -> Self {
        Error::Unknown {
            kind,
            name: name.into(),
        }
    }
}
