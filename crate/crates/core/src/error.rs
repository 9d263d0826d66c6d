use thiserror::Error;

/// Errors raised by the physical models, timing pipeline and protocol logic.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter is outside its documented domain.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A caller broke an ordering or sequencing contract.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// No comparable bit pairs were available; distinct from a QBER of zero.
    #[error("QBER undefined: no non-erasure bits were compared")]
    UndefinedQber,
}

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
