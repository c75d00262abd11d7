//! Secure data factory: identity-gated ingestion of field telemetry.
//!
//! Batches pass through four gates in a fixed order: workload identity,
//! schema, distribution drift (KL divergence of within-batch fluctuations
//! against a baseline) and swing-equation physics. The first failing gate
//! dead-letters the batch. Accepted batches have their numeric node ids
//! tokenized and are sealed under the tenant's key.

mod dlq;
mod fpe;
mod histogram;
mod physics;
mod tenant;

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditEvent, EventKind};
use crate::identity::{verify_credential, RevocationList, TrustRootKey, Verdict, WorkloadCredential};

pub use dlq::{read_batches, DlqIndexEntry, DlqRecord, DlqStore};
pub use fpe::{detokenize_field, tokenize_field, FpeError, MAX_DIGITS};
pub use histogram::{kl_divergence, Histogram};
pub use physics::{
    physics_check, reported_deviation, GridParameters, PhysicsCheckConfig, PhysicsOutcome, ReferenceObservation,
};
pub use tenant::{open_for_tenant, seal_for_tenant, Keystore, SealError};

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("histograms have different bin edges")]
    BinMismatch,
    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),
    #[error("no reference observations supplied")]
    MissingReference,
    #[error("batch has no records")]
    EmptyBatch,
    #[error("invalid parameter `{0}`")]
    InvalidParameter(String),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Seal(#[from] SealError),
    #[error(transparent)]
    Fpe(#[from] FpeError),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyMeasurement {
    pub timestamp: u64,
    pub node_id: String,
    pub freq_hz: f64,
    pub power_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryBatch {
    pub batch_id: String,
    pub tenant_id: String,
    pub source_id: String,
    pub credential: WorkloadCredential,
    pub schema_version: u32,
    pub records: Vec<FrequencyMeasurement>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SchemaVerdict {
    Ok,
    /// Path of the first offending field, e.g. `records[3].freq_hz`.
    Violation(String),
}

pub fn validate_schema(batch: &TelemetryBatch, expected_version: u32) -> SchemaVerdict {
    if batch.schema_version != expected_version {
        return SchemaVerdict::Violation("schema_version".into());
    }
    if batch.records.is_empty() {
        return SchemaVerdict::Violation("records".into());
    }
    let mut prev_ts = 0;
    for (i, r) in batch.records.iter().enumerate() {
        if !(r.freq_hz.is_finite() && r.freq_hz > 0.0) {
            return SchemaVerdict::Violation(format!("records[{i}].freq_hz"));
        }
        if !r.power_mw.is_finite() {
            return SchemaVerdict::Violation(format!("records[{i}].power_mw"));
        }
        if r.timestamp < prev_ts {
            return SchemaVerdict::Violation(format!("records[{i}].timestamp"));
        }
        prev_ts = r.timestamp;
    }
    SchemaVerdict::Ok
}

/// Within-batch fluctuations, `freq_hz - mean(freq_hz)`.
pub fn fluctuations(batch: &TelemetryBatch) -> Vec<f64> {
    let n = batch.records.len() as f64;
    let mean = batch.records.iter().map(|r| r.freq_hz).sum::<f64>() / n;
    batch.records.iter().map(|r| r.freq_hz - mean).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeadLetterReason {
    IdentityRejected,
    SchemaViolation,
    DriftExceeded,
    PhysicsViolation,
    MissingReference,
}

impl DeadLetterReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DeadLetterReason::IdentityRejected => "IdentityRejected",
            DeadLetterReason::SchemaViolation => "SchemaViolation",
            DeadLetterReason::DriftExceeded => "DriftExceeded",
            DeadLetterReason::PhysicsViolation => "PhysicsViolation",
            DeadLetterReason::MissingReference => "MissingReference",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Accepted,
    DeadLettered(DeadLetterReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestVerdict {
    pub outcome: IngestOutcome,
    pub implied_delta_p_mw: Option<f64>,
    pub audit_events: Vec<AuditEvent>,
}

impl IngestVerdict {
    pub fn reason(&self) -> Option<DeadLetterReason> {
        match self.outcome {
            IngestOutcome::Accepted => None,
            IngestOutcome::DeadLettered(r) => Some(r),
        }
    }

    pub fn is_accepted(&self) -> bool {
        self.outcome == IngestOutcome::Accepted
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub expected_schema_version: u32,
    #[serde(default = "default_kl_threshold")]
    pub kl_threshold_nats: f64,
    #[serde(default = "default_kl_epsilon")]
    pub kl_epsilon: f64,
    pub physics: PhysicsCheckConfig,
}

fn default_kl_threshold() -> f64 {
    0.1
}

fn default_kl_epsilon() -> f64 {
    1e-9
}

impl IngestConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.kl_threshold_nats > 0.0) {
            return Err(DataError::InvalidParameter("kl_threshold_nats".into()));
        }
        if !(self.kl_epsilon > 0.0) {
            return Err(DataError::InvalidParameter("kl_epsilon".into()));
        }
        self.physics.validate()
    }
}

/// Everything a gate needs besides the batch itself.
#[derive(Debug, Clone, Copy)]
pub struct IngestContext<'a> {
    pub trust_root: &'a TrustRootKey,
    pub revocations: &'a RevocationList,
    /// Baseline histogram of within-batch fluctuations.
    pub baseline: &'a Histogram,
    pub grid: &'a GridParameters,
    pub refs: &'a [ReferenceObservation],
    pub cfg: &'a IngestConfig,
}

/// Number of batches that reached each gate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageCounters {
    pub identity: u64,
    pub schema: u64,
    pub drift: u64,
    pub physics: u64,
}

/// Switches used by tests to remove a gate from the pipeline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GateOverrides {
    pub skip_physics: bool,
}

pub fn ingest(batch: &TelemetryBatch, ctx: &IngestContext<'_>, now: u64) -> IngestVerdict {
    ingest_observed(batch, ctx, now, GateOverrides::default(), &mut StageCounters::default())
}

pub fn ingest_observed(
    batch: &TelemetryBatch,
    ctx: &IngestContext<'_>,
    now: u64,
    overrides: GateOverrides,
    counters: &mut StageCounters,
) -> IngestVerdict {
    let reject = |reason: DeadLetterReason, detail: String, implied: Option<f64>, kl: Option<f64>| {
        let mut ev = AuditEvent::new(now, EventKind::DlqRoute, "DLQ_ROUTE")
            .with("batch_id", &batch.batch_id)
            .with("tenant_id", &batch.tenant_id)
            .with("source_id", &batch.source_id)
            .with("reason", reason.as_str())
            .with("detail", detail);
        if let Some(p) = implied {
            ev = ev.with("implied_delta_p_mw", p);
        }
        if let Some(k) = kl {
            ev = ev.with("kl_nats", k);
        }
        IngestVerdict {
            outcome: IngestOutcome::DeadLettered(reason),
            implied_delta_p_mw: implied,
            audit_events: vec![ev],
        }
    };

    counters.identity += 1;
    let verdict = verify_credential(&batch.credential, ctx.trust_root, now, ctx.revocations);
    if verdict != Verdict::Valid {
        return reject(DeadLetterReason::IdentityRejected, format!("{verdict:?}"), None, None);
    }
    if batch.credential.subject_id != batch.source_id || batch.credential.tenant_id != batch.tenant_id {
        return reject(
            DeadLetterReason::IdentityRejected,
            "credential does not name this source and tenant".into(),
            None,
            None,
        );
    }

    counters.schema += 1;
    if let SchemaVerdict::Violation(path) = validate_schema(batch, ctx.cfg.expected_schema_version) {
        return reject(DeadLetterReason::SchemaViolation, path, None, None);
    }

    counters.drift += 1;
    let observed = match Histogram::from_samples(ctx.baseline.bin_edges().to_vec(), fluctuations(batch)) {
        Ok(h) => h,
        Err(e) => return reject(DeadLetterReason::SchemaViolation, e.to_string(), None, None),
    };
    let kl = match kl_divergence(&observed, ctx.baseline, ctx.cfg.kl_epsilon) {
        Ok(d) => d,
        Err(e) => return reject(DeadLetterReason::SchemaViolation, e.to_string(), None, None),
    };
    if kl > ctx.cfg.kl_threshold_nats {
        return reject(
            DeadLetterReason::DriftExceeded,
            format!("KL {kl:.4} nats exceeds {}", ctx.cfg.kl_threshold_nats),
            None,
            Some(kl),
        );
    }

    let implied = if overrides.skip_physics {
        None
    } else {
        counters.physics += 1;
        match physics_check(batch, ctx.grid, ctx.refs, &ctx.cfg.physics) {
            Ok(PhysicsOutcome::Ok { implied_delta_p_mw }) => Some(implied_delta_p_mw),
            Ok(PhysicsOutcome::Violation {
                implied_delta_p_mw,
                detail,
            }) => {
                return reject(DeadLetterReason::PhysicsViolation, detail, Some(implied_delta_p_mw), Some(kl));
            }
            Err(DataError::MissingReference) => {
                return reject(DeadLetterReason::MissingReference, "no reference PMUs".into(), None, Some(kl));
            }
            Err(e) => return reject(DeadLetterReason::SchemaViolation, e.to_string(), None, Some(kl)),
        }
    };

    let mut ev = AuditEvent::new(now, EventKind::IngestOk, "INGEST_OK")
        .with("batch_id", &batch.batch_id)
        .with("tenant_id", &batch.tenant_id)
        .with("source_id", &batch.source_id)
        .with("records", batch.records.len())
        .with("kl_nats", kl);
    if let Some(p) = implied {
        ev = ev.with("implied_delta_p_mw", p);
    }
    IngestVerdict {
        outcome: IngestOutcome::Accepted,
        implied_delta_p_mw: implied,
        audit_events: vec![ev],
    }
}

/// An accepted batch after tokenization and sealing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedBatch {
    pub batch_id: String,
    pub tenant_id: String,
    pub blob: Vec<u8>,
}

/// Ingestion front door: runs [`ingest`] and routes the batch to the DLQ
/// or to the sealed accepted stream.
#[derive(Debug)]
pub struct SecureDataFactory {
    dlq: DlqStore,
    accepted: Mutex<Vec<SealedBatch>>,
    keystore: Keystore,
    fpe_key: Vec<u8>,
    overrides: GateOverrides,
    counters: Mutex<StageCounters>,
}

impl SecureDataFactory {
    pub fn new(dlq: DlqStore, keystore: Keystore, fpe_key: Vec<u8>) -> Self {
        Self {
            dlq,
            accepted: Mutex::new(Vec::new()),
            keystore,
            fpe_key,
            overrides: GateOverrides::default(),
            counters: Mutex::new(StageCounters::default()),
        }
    }

    pub fn with_overrides(mut self, overrides: GateOverrides) -> Self {
        self.overrides = overrides;
        self
    }

    pub fn submit(
        &self,
        batch: &TelemetryBatch,
        ctx: &IngestContext<'_>,
        now: u64,
    ) -> Result<IngestVerdict, DataError> {
        let mut counters = StageCounters::default();
        let verdict = ingest_observed(batch, ctx, now, self.overrides, &mut counters);
        {
            let mut total = self.counters.lock().expect("counters poisoned");
            total.identity += counters.identity;
            total.schema += counters.schema;
            total.drift += counters.drift;
            total.physics += counters.physics;
        }
        match verdict.outcome {
            IngestOutcome::DeadLettered(reason) => self.dlq.append(batch, reason, now)?,
            IngestOutcome::Accepted => {
                let sealed = self.tokenize_and_seal(batch)?;
                self.accepted.lock().expect("accepted stream poisoned").push(sealed);
            }
        }
        Ok(verdict)
    }

    fn tokenize_and_seal(&self, batch: &TelemetryBatch) -> Result<SealedBatch, DataError> {
        let mut clean = batch.clone();
        for r in &mut clean.records {
            if !r.node_id.is_empty() && r.node_id.len() <= MAX_DIGITS && r.node_id.bytes().all(|b| b.is_ascii_digit()) {
                r.node_id = tokenize_field(&r.node_id, &self.fpe_key)?;
            }
        }
        let payload = serde_json::to_vec(&clean).map_err(std::io::Error::from)?;
        Ok(SealedBatch {
            batch_id: batch.batch_id.clone(),
            tenant_id: batch.tenant_id.clone(),
            blob: seal_for_tenant(&payload, &batch.tenant_id, &self.keystore)?,
        })
    }

    /// Opens an accepted batch for its own tenant.
    pub fn open_accepted(&self, batch_id: &str, tenant_id: &str) -> Result<Option<TelemetryBatch>, DataError> {
        let accepted = self.accepted.lock().expect("accepted stream poisoned");
        let Some(sealed) = accepted.iter().find(|s| s.batch_id == batch_id) else {
            return Ok(None);
        };
        let bytes = open_for_tenant(&sealed.blob, tenant_id, &self.keystore)?;
        serde_json::from_slice(&bytes).map(Some).map_err(|e| DataError::Corrupt(e.to_string()))
    }

    pub fn accepted_ids(&self) -> Vec<String> {
        self.accepted.lock().expect("accepted stream poisoned").iter().map(|s| s.batch_id.clone()).collect()
    }

    pub fn dlq(&self) -> &DlqStore {
        &self.dlq
    }

    pub fn counters(&self) -> StageCounters {
        *self.counters.lock().expect("counters poisoned")
    }
}
