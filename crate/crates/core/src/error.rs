use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("site index {index} out of range for window of size {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("operation requires the Gaussian case (zero perturbation)")]
    RequiresGaussian,

    #[error("transfer engine requires nearest-neighbour coupling (range 1), got range {0}")]
    RequiresNearestNeighbour(usize),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("quadrature did not converge under grid refinement: {quantity} changed by {change:e}")]
    GridNotConverged { quantity: String, change: f64 },

    #[error("characteristic-function tail is not decaying (contribution {contribution:e} beyond |xi| = {xi:.1})")]
    TailNotDecaying { xi: f64, contribution: f64 },

    #[error("imaginary residue {0:e} exceeds tolerance")]
    ImaginaryResidue(f64),

    #[error("series too short: {len} < {min}")]
    SeriesTooShort { len: usize, min: usize },

    #[error("insufficient samples: {got} rows, need {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("models differ beyond boundary values: {0}")]
    ModelMismatch(String),

    #[error("local function support {start}..{end} invalid: {reason}")]
    InvalidSupport { start: usize, end: usize, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by bad user input rather than a numerical failure.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::InvalidModel(_)
                | Error::InvalidConfig(_)
                | Error::RequiresGaussian
                | Error::RequiresNearestNeighbour(_)
                | Error::Parse(_)
                | Error::Io(_)
                | Error::DimensionMismatch { .. }
        )
    }
}
