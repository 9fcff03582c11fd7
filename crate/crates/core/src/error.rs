use thiserror::Error;

use crate::protocol::AtomLevel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("manifold index {0} is out of range (must be >= -2)")]
    InvalidManifold(i64),

    #[error("the dark manifold n = -2 has no coupling frequency")]
    DarkManifold,

    #[error("negative time {0}")]
    NegativeTime(f64),

    #[error("initial amplitudes are not normalized (norm^2 = {0})")]
    NotNormalized(f64),

    #[error("integration step must be positive, got {0}")]
    InvalidStep(f64),

    #[error("cavity index {cavity} out of range for {n_cavities} cavities")]
    CavityOutOfRange { cavity: usize, n_cavities: usize },

    #[error("detection branch |{level}> is empty (probability {probability:e})")]
    EmptyBranch { level: AtomLevel, probability: f64 },

    #[error("target basis does not match the cavity field: {0}")]
    BasisMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("no feasible point satisfies the success-probability floor {0}")]
    NoFeasiblePoint(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
