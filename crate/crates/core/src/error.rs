use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LkError>;

/// Which matrix failed to invert in the separable-operator inverse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SingularWhich {
    /// The constant block `P`.
    P,
    /// `S(s)` at the given evaluation point.
    SAtNode(f64),
    /// `I + KΓ − r K Hᵀ P⁻¹ H`.
    TInner,
    /// `I + KΓ`.
    IPlusKGamma,
    /// Any other named matrix (gain fitting, boundary solves).
    Other(&'static str),
}

impl fmt::Display for SingularWhich {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SingularWhich::P => write!(f, "P"),
            SingularWhich::SAtNode(s) => write!(f, "S(s) at s={s}"),
            SingularWhich::TInner => write!(f, "I+KΓ-rKHᵀP⁻¹H"),
            SingularWhich::IPlusKGamma => write!(f, "I+KΓ"),
            SingularWhich::Other(name) => write!(f, "{name}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum LkError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: {left:?} vs {right:?}")]
    DimensionMismatch {
        context: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("interval mismatch: r={0} vs r={1}")]
    IntervalMismatch(f64, f64),

    #[error("operation {0} is not defined for a single-variable polynomial")]
    WrongVariableCount(&'static str),

    #[error("singular matrix {which} (condition estimate {condition_estimate:e})")]
    SingularMatrix {
        which: SingularWhich,
        condition_estimate: f64,
    },

    #[error("quadrature rules disagree on {what}: relative difference {difference:e}")]
    QuadratureMismatch { what: &'static str, difference: f64 },

    #[error("target degree {target} exceeds the certificate's expressible degree {expressible}")]
    DegreeTooLow { target: usize, expressible: usize },

    #[error("polynomial degree {found} exceeds the separable basis degree {degree}")]
    BasisMismatch { degree: usize, found: usize },

    #[error("unknown variable handle {0}")]
    UnknownHandle(usize),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("numerical trouble: {0}")]
    NumericalTrouble(String),

    #[error("closed-loop validation failed: {details}")]
    ValidationFailed { details: String },

    #[error("non-finite state at t={t}")]
    NonFiniteState { t: f64 },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for LkError {
    fn from(e: serde_json::Error) -> Self {
        LkError::Parse(e.to_string())
    }
}
