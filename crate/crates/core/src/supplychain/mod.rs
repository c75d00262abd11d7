//! Model supply chain: signed artifacts, a write-once registry, and the
//! adversarial-robustness gate that runs before promotion.

mod artifact;
mod registry;
mod robustness;

pub use artifact::{
    sign_artifact, verify_artifact, ModelArtifact, Provenance, SignedArtifact, SignerKey, SignerPublicKey,
    REQUIRED_MANIFEST_KEYS,
};
pub use registry::{ProvenanceEntry, Receipt, Registry};
pub use robustness::{
    evaluate_robustness, fgsm_perturb, robustness_gate, GateFailures, GateOutcome, LinearModel, RobustnessReport,
    Sample,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SupplyChainError {
    #[error("invalid artifact: {0}")]
    InvalidArtifact(String),
    #[error("key error: {0}")]
    Key(String),
    #[error("malformed signed artifact: {0}")]
    Malformed(String),
    #[error("digest {0} is already stored with different content")]
    ImmutableViolation(String),
    #[error("artifact signature does not verify against the trust root")]
    UnverifiableArtifact,
    #[error("no artifact with digest {0}")]
    NotFound(String),
    #[error("feature vector has {got} components, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label must be +1 or -1, got {0}")]
    InvalidLabel(i8),
    #[error("epsilon must be non-negative, got {0}")]
    InvalidEpsilon(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("candidate evaluated at epsilon {candidate}, baseline at {baseline}")]
    EpsilonMismatch { candidate: f64, baseline: f64 },
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for SupplyChainError {
    fn from(e: std::io::Error) -> Self {
        SupplyChainError::Io(e.to_string())
    }
}
