use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure mode of the library.
///
/// Variants split into two families: input/config problems (rejected before
/// any numerics run) and numerical failures detected while integrating.
/// [`Error::is_numerical`] tells them apart, which the CLI maps onto exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("negative parameter `{name}` = {value} (must be >= 0)")]
    NegativeParameter { name: &'static str, value: f64 },
    #[error("non-finite parameter `{name}`")]
    NonFiniteParameter { name: &'static str },
    #[error("type weights must be positive and sum to 1 (sum = {sum})")]
    BadWeights { sum: f64 },
    #[error("portfolio has no names or no types")]
    EmptyPortfolio,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid time grid: {0}")]
    BadGrid(String),
    #[error("invalid systematic factor spec: {0}")]
    BadSystematic(String),
    #[error("non-finite input {0}")]
    NonFiniteInput(f64),
    #[error("operation requires a homogeneous (single-type) portfolio, got {types} types")]
    NotHomogeneous { types: usize },
    #[error("time {t} is not a grid point")]
    TimeOffGrid { t: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("moment vector too short: need {needed} entries, have {have}")]
    MomentVectorTooShort { needed: usize, have: usize },
    #[error("truncation level must be >= 1 (got {0})")]
    BadTruncation(usize),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("negative eigenvalue mass {clipped:e} exceeds tolerance {tolerance:e}")]
    ExcessiveNegativity { clipped: f64, tolerance: f64 },
    #[error("observed covariance block is singular even after ridge regularization")]
    SingularObservedBlock,
    #[error("operation requires beta_s = 0 (got {0})")]
    RequiresZeroBetaS(f64),
    #[error("quantile level must lie in (0, 1), got {0}")]
    BadLevel(f64),
    #[error("degenerate allocation inputs: {0}")]
    DegenerateInputs(String),
    #[error("mismatched path counts: {0}")]
    MismatchedPaths(String),
    #[error("path count must be >= 1")]
    NoPaths,
    #[error("non-finite coefficient in matrix generator at t = {t}")]
    NonFiniteCoefficient { t: f64 },
    #[error("moment {index} blew up to {value:e} at t = {t}; reduce the time step")]
    UnstableBlowup { index: usize, value: f64, t: f64 },
    #[error("fundamental solution ill-conditioned (condition number {cond:e} at t = {t})")]
    IllConditionedPsi { cond: f64, t: f64 },
}

impl Error {
    /// True for failures that arise while integrating, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ExcessiveNegativity { .. }
                | Error::SingularObservedBlock
                | Error::NonFiniteCoefficient { .. }
                | Error::UnstableBlowup { .. }
                | Error::IllConditionedPsi { .. }
        )
    }
}
