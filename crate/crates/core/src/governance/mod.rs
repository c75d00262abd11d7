//! Runtime governance: the policy sidecar in front of agent tool calls, the
//! latency circuit breaker on the AGC path, and the canary controller for
//! model promotion.

mod breaker;
mod canary;
mod sidecar;

pub use breaker::{
    breaker_record_latency, breaker_reset, BreakerAction, BreakerConfig, BreakerMode, BreakerOutcome, BreakerState,
    BREAKER_CONTROL,
};
pub use canary::{
    canary_evaluate, canary_route, stable_hash, Arm, CanaryConfig, CanaryDecision, CanaryEvaluation, Prediction,
    RollbackReason, CANARY_CONTROL, MAX_FRACTION, MIN_FRACTION,
};
pub use sidecar::{
    rolling_average, sidecar_evaluate, CallKind, Decision, DenyReason, Policy, PolicyConfig, SidecarState, ToolCall,
    Verdict, SIDECAR_CONTROL,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GovernanceError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("breaker is already closed")]
    AlreadyClosed,
    #[error("prediction lists must be non-empty")]
    EmptyPredictions,
    #[error("sample at {0} ms is older than the latest recorded sample")]
    OutOfOrder(u64),
}
