//! Control-plane audit events and the compliance tag matrix.
//!
//! Every event carries the framework tags of the threat-vector row its
//! control belongs to. Tags are looked up from a static table, never
//! assembled at the emission site, so the log can be re-checked offline.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("unknown event kind `{0}`")]
    UnknownEventKind(String),
    #[error("event at {ts_ms} ms precedes last logged event at {last_ms} ms")]
    OutOfOrder { ts_ms: u64, last_ms: u64 },
    #[error("audit log line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Kinds of events written to the audit log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    IngestOk,
    DlqRoute,
    BreakerBreak,
    BreakerEscalate,
    SidecarDeny,
    SidecarAllow,
    CanaryRollback,
    IrPlanInvoked,
    EisacNotified,
    RecoveryDocumented,
    MultiVectorSignature,
    RegistryPut,
    GateFail,
    /// End-of-phase frequency summary while droop control holds the grid.
    GridStability,
}

impl EventKind {
    pub const ALL: [EventKind; 14] = [
        EventKind::IngestOk,
        EventKind::DlqRoute,
        EventKind::BreakerBreak,
        EventKind::BreakerEscalate,
        EventKind::SidecarDeny,
        EventKind::SidecarAllow,
        EventKind::CanaryRollback,
        EventKind::IrPlanInvoked,
        EventKind::EisacNotified,
        EventKind::RecoveryDocumented,
        EventKind::MultiVectorSignature,
        EventKind::RegistryPut,
        EventKind::GateFail,
        EventKind::GridStability,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::IngestOk => "INGEST_OK",
            EventKind::DlqRoute => "DLQ_ROUTE",
            EventKind::BreakerBreak => "BREAKER_BREAK",
            EventKind::BreakerEscalate => "BREAKER_ESCALATE",
            EventKind::SidecarDeny => "SIDECAR_DENY",
            EventKind::SidecarAllow => "SIDECAR_ALLOW",
            EventKind::CanaryRollback => "CANARY_ROLLBACK",
            EventKind::IrPlanInvoked => "IR_PLAN_INVOKED",
            EventKind::EisacNotified => "EISAC_NOTIFIED",
            EventKind::RecoveryDocumented => "RECOVERY_DOCUMENTED",
            EventKind::MultiVectorSignature => "MULTI_VECTOR_SIGNATURE",
            EventKind::RegistryPut => "REGISTRY_PUT",
            EventKind::GateFail => "GATE_FAIL",
            EventKind::GridStability => "GRID_STABILITY",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| AuditError::UnknownEventKind(s.to_string()))
    }
}

/// Rows of the unified compliance matrix, one per threat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComplianceRow {
    DataPoisoning = 1,
    RagInjection = 2,
    SupplyChain = 3,
    UnboundedConsumption = 4,
    ExcessiveAgency = 5,
    ContainerEscape = 6,
    ModelDrift = 7,
}

impl ComplianceRow {
    pub const ALL: [ComplianceRow; 7] = [
        ComplianceRow::DataPoisoning,
        ComplianceRow::RagInjection,
        ComplianceRow::SupplyChain,
        ComplianceRow::UnboundedConsumption,
        ComplianceRow::ExcessiveAgency,
        ComplianceRow::ContainerEscape,
        ComplianceRow::ModelDrift,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn attack_vector(self) -> &'static str {
        match self {
            ComplianceRow::DataPoisoning => "Data & Model Poisoning (Physics-Aware)",
            ComplianceRow::RagInjection => "RAG & Vector Store Injection",
            ComplianceRow::SupplyChain => "Supply Chain & Registry Tampering",
            ComplianceRow::UnboundedConsumption => "Unbounded Consumption / Sponge Attack",
            ComplianceRow::ExcessiveAgency => "Excessive Agency & Prompt Injection",
            ComplianceRow::ContainerEscape => "Container Escape & RCE",
            ComplianceRow::ModelDrift => "Model Drift & Unsafe Output Propagation",
        }
    }

    /// Framework tags in the order ATLAS, OWASP, MAESTRO, NIST AI RMF,
    /// then NERC CIP and PES TR-92 as listed in the matrix.
    pub fn tags(self) -> &'static [&'static str] {
        match self {
            ComplianceRow::DataPoisoning => &[
                "AML.T0020",
                "LLM04:2025",
                "OWASP-AIX-Dev-Time",
                "MAESTRO-L2",
                "NIST-AI-RMF-Map-1.1",
                "NIST-AI-RMF-Measure-2.6",
                "CIP-002-5.1a",
                "CIP-005-8-R1",
                "CIP-011-4.1-R1.2",
                "CIP-007-7.1-R5",
                "CIP-015-1",
                "PES-TR-92-AMI-Validation",
            ],
            ComplianceRow::RagInjection => &[
                "AML.T0020",
                "LLM08:2025",
                "LLM02:2025",
                "MAESTRO-L2",
                "MAESTRO-L3",
                "NIST-AI-RMF-Map-1.1",
                "NIST-AI-RMF-Manage-2.4",
                "CIP-011-4.1-R1",
                "CIP-005-8-R1",
                "CIP-003-10",
            ],
            ComplianceRow::SupplyChain => &[
                "AML.T0010",
                "LLM03:2025",
                "MAESTRO-L3",
                "MAESTRO-L4",
                "NIST-AI-RMF-Govern-3.1",
                "NIST-AI-RMF-Manage-1.3",
                "CIP-010-5-R1.1",
                "CIP-010-5-R3",
                "CIP-013-3-R1.2.5",
                "CIP-007-7.1-R2",
            ],
            ComplianceRow::UnboundedConsumption => &[
                "AML.T0029",
                "LLM10:2025",
                "MAESTRO-L4",
                "MAESTRO-L5",
                "NIST-AI-RMF-Map-1.5",
                "NIST-AI-RMF-Manage-1.3",
                "PES-TR-92-AGC-RTT",
                "CIP-007-7.1-R5",
                "CIP-008-7.1-R1/R2",
                "CIP-009-7.1-R1",
                "CIP-014-3-R1",
                "CIP-015-1",
            ],
            ComplianceRow::ExcessiveAgency => &[
                "AML.T0051",
                "LLM06:2025",
                "LLM01:2025",
                "MAESTRO-L6",
                "MAESTRO-L7",
                "NIST-AI-RMF-Manage-3.2",
                "NIST-AI-RMF-Govern-1.2",
                "CIP-005-8-R1",
                "CIP-007-7.1-R5",
                "CIP-003-10-R1",
                "PES-TR-92-Immutable-Safety-Bounds",
            ],
            ComplianceRow::ContainerEscape => &[
                "AML.T0029",
                "LLM05:2025",
                "MAESTRO-L4",
                "NIST-AI-RMF-Manage-1.3",
                "CIP-005-8-R1",
                "CIP-007-7.1-R5",
                "CIP-010-5-R1",
                "CIP-015-1",
            ],
            ComplianceRow::ModelDrift => &[
                "AML.T0020",
                "AML.T0040",
                "LLM09:2025",
                "LLM05:2025",
                "MAESTRO-L5",
                "MAESTRO-L1",
                "NIST-AI-RMF-Measure-2.6",
                "NIST-AI-RMF-Manage-2.2",
                "CIP-010-5-R1.1",
                "CIP-008-7.1-R1",
                "CIP-015-1",
                "PES-TR-92-Frequency-Band",
            ],
        }
    }
}

/// Matrix row whose control emits events of this kind.
///
/// Rows 2 and 6 have no runtime control in this crate and are never returned.
pub fn row_for(kind: EventKind) -> ComplianceRow {
    match kind {
        EventKind::IngestOk | EventKind::DlqRoute => ComplianceRow::DataPoisoning,
        EventKind::BreakerBreak
        | EventKind::BreakerEscalate
        | EventKind::IrPlanInvoked
        | EventKind::EisacNotified
        | EventKind::RecoveryDocumented
        | EventKind::MultiVectorSignature
        | EventKind::GridStability => ComplianceRow::UnboundedConsumption,
        EventKind::SidecarDeny | EventKind::SidecarAllow => ComplianceRow::ExcessiveAgency,
        EventKind::CanaryRollback => ComplianceRow::ModelDrift,
        EventKind::RegistryPut | EventKind::GateFail => ComplianceRow::SupplyChain,
    }
}

/// Framework tags for an event kind. The reason does not change the row:
/// every dead-letter reason is a data-plane rejection.
pub fn compliance_map(kind: EventKind, _reason: Option<&str>) -> Vec<String> {
    row_for(kind).tags().iter().map(|t| t.to_string()).collect()
}

/// String-keyed variant used when reading foreign logs.
pub fn compliance_map_str(kind: &str, reason: Option<&str>) -> Result<Vec<String>, AuditError> {
    Ok(compliance_map(kind.parse()?, reason))
}

/// A single control-plane event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditEvent {
    pub ts_ms: u64,
    pub event_kind: EventKind,
    pub control_id: String,
    pub detail: BTreeMap<String, String>,
    pub framework_tags: Vec<String>,
}

impl AuditEvent {
    /// Builds an event with tags taken from the compliance map.
    pub fn new(ts_ms: u64, event_kind: EventKind, control_id: impl Into<String>) -> Self {
        Self {
            ts_ms,
            event_kind,
            control_id: control_id.into(),
            detail: BTreeMap::new(),
            framework_tags: compliance_map(event_kind, None),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.detail.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.detail.get(key).map(String::as_str)
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.get(key)?.parse().ok()
    }

    pub fn tags_match_map(&self) -> bool {
        self.framework_tags == compliance_map(self.event_kind, self.get("reason"))
    }
}

/// Append-only, time-ordered event log. Appends are atomic per event.
#[derive(Debug, Default)]
pub struct AuditLog {
    events: Mutex<Vec<AuditEvent>>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&self, event: AuditEvent) -> Result<usize, AuditError> {
        let mut events = self.events.lock().expect("audit log poisoned");
        if let Some(last) = events.last() {
            if event.ts_ms < last.ts_ms {
                return Err(AuditError::OutOfOrder {
                    ts_ms: event.ts_ms,
                    last_ms: last.ts_ms,
                });
            }
        }
        events.push(event);
        Ok(events.len() - 1)
    }

    pub fn extend(&self, events: impl IntoIterator<Item = AuditEvent>) -> Result<(), AuditError> {
        for e in events {
            self.append(e)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.lock().expect("audit log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn last_ts(&self) -> Option<u64> {
        self.events.lock().expect("audit log poisoned").last().map(|e| e.ts_ms)
    }

    pub fn snapshot(&self) -> Vec<AuditEvent> {
        self.events.lock().expect("audit log poisoned").clone()
    }

    pub fn into_events(self) -> Vec<AuditEvent> {
        self.events.into_inner().expect("audit log poisoned")
    }
}

/// Writes events as JSON lines, one event per line.
pub fn write_jsonl<W: Write>(mut out: W, events: &[AuditEvent]) -> Result<(), AuditError> {
    for e in events {
        serde_json::to_writer(&mut out, e).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<AuditEvent>, AuditError> {
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|source| AuditError::Parse { line: i + 1, source })?;
        events.push(event);
    }
    Ok(events)
}
