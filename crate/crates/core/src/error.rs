use thiserror::Error;

/// Every failure the solver library can report.
#[derive(Debug, Error)]
pub enum PeridynError {
    #[error("invalid domain: right bound {b} must exceed left bound {a}")]
    InvalidDomain { a: f64, b: f64 },

    #[error("invalid resolution {0}: need at least 4 points per axis")]
    InvalidResolution(usize),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("relative error undefined: the solution field is identically zero")]
    ZeroDenominator,

    #[error("inverse transform left an imaginary residue of {0:e} (spectrum not conjugate-symmetric)")]
    ImaginaryResidue(f64),

    #[error("horizon {delta} exceeds half the periodic cell ({half})")]
    HorizonTooLarge { delta: f64, half: f64 },

    #[error("direct operator evaluation refused on a {0}x{0} grid (limit 64)")]
    GridTooLarge(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Newton iteration did not converge: residual {residual:e} after {iterations} iterations")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("conjugate gradient stalled: relative residual {residual:e} after {iterations} iterations")]
    KrylovStall { iterations: usize, residual: f64 },

    #[error("non-finite field value at step {step} (t = {time})")]
    NonFinite { step: usize, time: f64 },

    #[error("extension {width} is not an integer multiple of the grid spacing {dx}")]
    NonIntegerExtension { width: f64, dx: f64 },

    #[error("grids are not nested: {coarse} points cannot be subsampled from {fine}")]
    NonNestedGrids { coarse: usize, fine: usize },

    #[error("observed rate needs positive errors (got {0:e} and {1:e})")]
    NonPositiveError(f64, f64),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PeridynError>;
