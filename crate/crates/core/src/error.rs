use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("ill-conditioned system (condition estimate {condition:.3e}){context}")]
    IllConditioned { condition: f64, context: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("derivative order {order} exceeds sieve degree {degree}")]
    InvalidOrder { order: usize, degree: usize },

    #[error("all {n} observations trimmed for component `{label}`")]
    DegenerateTrim { label: String, n: usize },

    #[error("combination undefined: {0}")]
    Domain(String),

    #[error("logistic regression: perfect or quasi-perfect separation detected after {iterations} iterations")]
    Separation { iterations: usize },

    #[error("logistic regression did not converge in {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NoConvergence { iterations: usize, gradient_norm: f64 },

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("weak instrument: first-stage denominator {denominator:.3e} is within 0.01 of zero")]
    WeakInstrument { denominator: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),
}

impl Error {
    /// True for failures of the numerical pipeline, as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        !matches!(self, Error::InvalidConfig(_) | Error::InvalidSample(_) | Error::DimensionMismatch(_))
    }

    pub(crate) fn ill_conditioned(condition: f64) -> Self {
        Error::IllConditioned { condition, context: String::new() }
    }

    pub(crate) fn with_context(self, ctx: impl AsRef<str>) -> Self {
        match self {
            Error::IllConditioned { condition, context } => {
                Error::IllConditioned { condition, context: format!("{context}; {}", ctx.as_ref()) }
            }
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
