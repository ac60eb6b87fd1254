use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("negative weight {weight} at atom {index}")]
    NegativeWeight { index: usize, weight: f64 },
    #[error("measure has zero total mass")]
    ZeroMass,
    #[error("weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("empty input")]
    Empty,
    #[error("covariance is not positive semidefinite: {0}")]
    NonPsdCovariance(String),
    #[error("smoothing bandwidth must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("numerical underflow in {0}")]
    NumericalUnderflow(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("atom {0} of the source measure has zero weight")]
    ZeroWeightAtom(usize),
    #[error("grid [{lo}, {hi}] does not cover the supports")]
    GridTooCoarse { lo: f64, hi: f64 },
    #[error("significance level must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("invalid regime: {0}")]
    InvalidRegime(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
