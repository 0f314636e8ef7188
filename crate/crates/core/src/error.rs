use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("{op}: invalid input: {reason}")]
    InvalidInput { op: &'static str, reason: String },

    #[error("request {id}: {reason}")]
    InvalidRequest { id: u64, reason: String },

    #[error("request {id}: state machine violation: {reason}")]
    StateViolation { id: u64, reason: String },

    #[error("memory ledger violation at iteration {iteration}: {detail}")]
    LedgerViolation { iteration: u64, detail: String },

    #[error("token budget violation at iteration {iteration}: {detail}")]
    BudgetViolation { iteration: u64, detail: String },

    #[error("simulation did not terminate within {cap} iterations")]
    IterationCap { cap: u64 },

    #[error("metrics for request {id}: {reason}")]
    UnorderedTimestamps { id: u64, reason: String },
}

pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidInput {
        op,
        reason: reason.into(),
    }
}
