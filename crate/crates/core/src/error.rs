use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },

    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },

    #[error("vector has norm {norm}, expected unit norm")]
    NotUnit { norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("input {index} has norm {norm}, inputs must lie on the unit sphere")]
    InputNotUnit { index: usize, norm: f64 },

    #[error("target {index} = {value} exceeds the bound m/mu = {bound}")]
    TargetBound { index: usize, value: f64, bound: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("top NTK eigenvalue {0} is not positive, no certificate is possible")]
    NonPositiveSpectrum(f64),

    #[error("projection of the initial error on u1 vanishes (A1 = {0})")]
    ZeroProjection(f64),

    #[error("gamma1 = {gamma1} leaves no admissible beta in (0, 1)")]
    NoAdmissibleBeta { gamma1: f64 },

    #[error("decrease condition violated: gamma1 = {gamma1} >= 1 - beta/2 with beta = {beta}")]
    ConditionViolated { gamma1: f64, beta: f64 },

    #[error("MPC rollout diverged")]
    Diverged,

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
