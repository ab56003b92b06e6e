use thiserror::Error;

use crate::assignment::Assignment;

/// Errors raised by designs, estimators and oracles.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("unit index {index} out of range for a design with {n} units")]
    OutOfRange { index: usize, n: usize },

    #[error("support too large: {count} assignment vectors exceed the enumeration cap {cap}")]
    SupportTooLarge { count: u128, cap: u64 },

    #[error("design is not enumerable: {0}")]
    NotEnumerable(String),

    #[error("infeasible threshold: no assignment vector passes the balance criterion")]
    InfeasibleThreshold,

    #[error(
        "sampler exhausted after {tries} proposals with {accepted} acceptances \
         (estimated acceptance rate {rate:.3e})"
    )]
    SamplerExhausted { tries: u64, accepted: u64, rate: f64 },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("substitution undefined: {0}")]
    SubstitutionUndefined(String),

    #[error("infeasible Q for this design: {0}")]
    InfeasibleQ(String),

    #[error("estimator undefined: {0}")]
    Undefined(String),

    #[error("at assignment {w}: {source}")]
    AtRealization {
        w: Assignment,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// The innermost error, skipping realization wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtRealization { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for errors that mean an estimator refused to run on this design.
    pub fn is_assumption_violation(&self) -> bool {
        matches!(
            self.root(),
            Error::Assumption(_) | Error::SubstitutionUndefined(_) | Error::InfeasibleQ(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
