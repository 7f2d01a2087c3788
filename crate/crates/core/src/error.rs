use thiserror::Error;

/// Errors raised by the dynamics engine, the models and the scenario runner.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("constraint matrix lost rank at q = {q:?}")]
    ConstraintDegeneracy { q: Vec<f64> },

    #[error("kinetic metric is not positive definite at q = {q:?}")]
    MetricNotPositiveDefinite { q: Vec<f64> },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("non-finite value at t = {t} in stage {stage}")]
    NonFiniteStage { t: f64, stage: usize },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix is not orientation preserving (det = {det})")]
    Orientation { det: f64 },

    #[error("Omega(K) inversion is degenerate (denominator {denominator:e})")]
    InversionDegeneracy { denominator: f64 },

    #[error("multiplier system is singular")]
    MultiplierDegeneracy,

    #[error("chart singularity: theta = {theta} is within {margin} of 0 or pi")]
    ChartSingularity { theta: f64, margin: f64 },

    #[error("observable `{0}` was not recorded")]
    MissingObservable(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("config error at line {line}, key `{key}`: {message}")]
    Config { line: usize, key: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by the numerics rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ConstraintDegeneracy { .. }
                | Error::MetricNotPositiveDefinite { .. }
                | Error::NumericalFailure(_)
                | Error::NonFiniteStage { .. }
                | Error::StepUnderflow { .. }
                | Error::Orientation { .. }
                | Error::InversionDegeneracy { .. }
                | Error::MultiplierDegeneracy
                | Error::ChartSingularity { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
