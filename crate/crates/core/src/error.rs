use std::path::PathBuf;

use thiserror::Error;

/// Every failure mode of the library, grouped loosely by the layer that raises it.
#[derive(Debug, Error)]
pub enum IpmError {
    #[error("invalid bounds: lower {lower} must be strictly below upper {upper}")]
    InvalidBounds { lower: f64, upper: f64 },
    #[error("invalid cell count {0}: need at least 2 cells")]
    InvalidCount(usize),
    #[error("no point patterns supplied")]
    EmptyInput,
    #[error("value {value} lies outside [{lower}, {upper}]")]
    OutOfRange { value: f64, lower: f64, upper: f64 },
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("population size must be nonnegative, got {0}")]
    NegativePopulation(f64),
    #[error("trait value {value} is below the observation threshold {lower}")]
    BelowThreshold { value: f64, lower: f64 },
    #[error("intensity field is defined on a different grid")]
    GridMismatch,
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("covariance matrix is not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },
    #[error("cell {cell} has {count} points but zero intensity")]
    ZeroIntensityWithCount { cell: usize, count: u64 },
    #[error("multiplicity must be at least 1")]
    InvalidMultiplicity,
    #[error("degenerate {0} range: all observed values are identical")]
    DegenerateRange(&'static str),
    #[error("climate (temp {temp}, precip {precip}) lies outside the binning rectangle")]
    OutOfRectangle { temp: f64, precip: f64 },
    #[error("no climate record for plot {plot} in year {year}")]
    MissingClimate { plot: String, year: i32 },
    #[error("bin {bin} has no usable plots in year index {year}")]
    EmptyBinYear { year: usize, bin: usize },
    #[error("invalid boundary value: {0}")]
    InvalidBound(String),
    #[error("population size is zero in year index {0}")]
    ZeroPopulation(usize),
    #[error("state violates the identifiability constraint: q+Delta = {value} outside ({lower}, {upper})")]
    ConstraintViolation { value: f64, lower: f64, upper: f64 },
    #[error("no live (year, bin) likelihood terms in the data")]
    NoLiveTerms,
    #[error("log posterior is not finite at the initial state")]
    NonFinitePosterior,
    #[error("need at least {required} samples, found {found}")]
    InsufficientSamples { found: usize, required: usize },
    #[error("cannot remove {requested} plots from a group of {available}")]
    OverRemoval { requested: usize, available: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IpmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IpmError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs rather than numerical or runtime trouble.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            IpmError::NoConvergence { .. }
                | IpmError::NotPositiveDefinite { .. }
                | IpmError::NonFinitePosterior
                | IpmError::Io { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, IpmError>;
