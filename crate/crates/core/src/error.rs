use thiserror::Error;

/// Errors raised by model construction, simulation and estimation.
#[derive(Debug, Error)]
pub enum HawkesError {
    #[error("invalid event series: {0}")]
    InvalidEvents(String),

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("{what} = {value} is outside the domain of the function")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid immigrant vector: {0}")]
    InvalidImmigrantVector(String),

    #[error("non-finite intensity at event {index}")]
    NonFiniteIntensity { index: usize },

    #[error("operation not supported for this model: {0}")]
    Unsupported(&'static str),

    #[error("simulation exploded: more than {cap} points generated with eta = {eta}")]
    Explosion { cap: usize, eta: f64 },

    #[error("degenerate denominator: {0}")]
    DegenerateDenominator(&'static str),

    #[error("no immigrant mass in the branching weights")]
    NoImmigrantMass,

    #[error("no offspring mass in the branching weights")]
    NoOffspringMass,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("comparison error: {0}")]
    Mismatch(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("delimited data error: {0}")]
    Csv(#[from] csv::Error),
}

impl HawkesError {
    /// True for errors caused by bad input or configuration, as opposed to
    /// numerical breakdown during a computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            HawkesError::InvalidEvents(_)
                | HawkesError::InvalidParameter { .. }
                | HawkesError::Domain { .. }
                | HawkesError::InvalidImmigrantVector(_)
                | HawkesError::Unsupported(_)
                | HawkesError::Config(_)
                | HawkesError::Parse { .. }
                | HawkesError::Csv(_)
                | HawkesError::Mismatch(_)
                | HawkesError::InsufficientData(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, HawkesError>;
