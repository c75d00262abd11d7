use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::correlate::linked_ids;
use crate::audit::{row_for, AuditEvent, ComplianceRow, EventKind};

pub const REPORT_VERSION: u32 = 1;

/// Phase B counts as stable while |df| stays inside the canary band half-width.
pub const STABILITY_ENVELOPE_HZ: f64 = 1.0;

pub const STATIC_ONLY_ROWS: [ComplianceRow; 2] = [ComplianceRow::RagInjection, ComplianceRow::ContainerEscape];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: String,
    pub batch_id: String,
    pub outcome: String,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseAReport {
    pub contained: bool,
    pub layer: u8,
    /// Dead-letter reason of the validly credentialed poisoned batch.
    pub reason: Option<String>,
    pub implied_delta_p_mw: Option<f64>,
    pub variants: Vec<VariantReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseBReport {
    pub contained: bool,
    pub layer: u8,
    pub max_latency_ms: Option<u64>,
    pub breaks: usize,
    pub escalated: bool,
    pub chain_events: Vec<String>,
    pub first_break_ms: Option<u64>,
    pub fallback_engaged_ms: Option<u64>,
    pub max_abs_delta_f_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCReport {
    pub contained: bool,
    pub layer: u8,
    pub deny_reasons: Vec<String>,
    pub violation_factor: Option<u64>,
    pub ceiling_usd_mwh: Option<f64>,
    pub status_code: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanaryReport {
    pub rolled_back: bool,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub signature_emitted: bool,
    pub signatures: usize,
    pub linked_event_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub report_version: u32,
    pub deterministic_seed: u64,
    pub phase_a: PhaseAReport,
    pub phase_b: PhaseBReport,
    pub phase_c: PhaseCReport,
    pub canary: CanaryReport,
    pub correlation: CorrelationReport,
    pub compliance_rows_exercised: Vec<u8>,
    pub compliance_rows_static_only: Vec<u8>,
    pub all_contained: bool,
}

fn in_phase<'a>(events: &'a [AuditEvent], phase: &'a str) -> impl Iterator<Item = &'a AuditEvent> + 'a {
    events.iter().filter(move |e| e.get("phase") == Some(phase))
}

fn phase_a(events: &[AuditEvent]) -> PhaseAReport {
    let variants: Vec<VariantReport> = ["A1", "A2", "control"]
        .iter()
        .filter_map(|v| {
            let e = in_phase(events, "A").find(|e| e.get("variant") == Some(v))?;
            Some(VariantReport {
                variant: v.to_string(),
                batch_id: e.get("batch_id").unwrap_or_default().to_string(),
                outcome: match e.event_kind {
                    EventKind::IngestOk => "Accepted".to_string(),
                    _ => "DeadLettered".to_string(),
                },
                reason: e.get("reason").map(str::to_string),
            })
        })
        .collect();
    let accepted: BTreeSet<&str> = events
        .iter()
        .filter(|e| e.event_kind == EventKind::IngestOk)
        .filter_map(|e| e.get("batch_id"))
        .collect();
    let poisoned_held = |v: &str| {
        variants
            .iter()
            .find(|r| r.variant == v)
            .is_some_and(|r| r.outcome == "DeadLettered" && !accepted.contains(r.batch_id.as_str()))
    };
    let a2 = in_phase(events, "A").find(|e| e.get("variant") == Some("A2"));
    PhaseAReport {
        contained: poisoned_held("A1") && poisoned_held("A2"),
        layer: 1,
        reason: a2.and_then(|e| e.get("reason")).map(str::to_string),
        implied_delta_p_mw: a2.and_then(|e| e.get_f64("implied_delta_p_mw")),
        variants,
    }
}

fn phase_b(events: &[AuditEvent]) -> PhaseBReport {
    let breaks: Vec<&AuditEvent> = in_phase(events, "B").filter(|e| e.event_kind == EventKind::BreakerBreak).collect();
    let chain_events: Vec<String> = in_phase(events, "B")
        .filter(|e| {
            matches!(
                e.event_kind,
                EventKind::IrPlanInvoked | EventKind::EisacNotified | EventKind::RecoveryDocumented
            )
        })
        .map(|e| e.event_kind.as_str().to_string())
        .collect();
    let stability = in_phase(events, "B").find(|e| e.event_kind == EventKind::GridStability);
    let first_break_ms = breaks.first().map(|e| e.ts_ms);
    let fallback_engaged_ms = stability.and_then(|e| e.get_u64("fallback_engaged_ms"));
    let dt = stability.and_then(|e| e.get_u64("dt_ms"));
    let max_abs_delta_f_hz = stability.and_then(|e| e.get_f64("max_abs_delta_f_hz"));
    let prompt = match (first_break_ms, fallback_engaged_ms, dt) {
        (Some(b), Some(f), Some(dt)) => f >= b && f - b <= dt,
        _ => false,
    };
    PhaseBReport {
        contained: prompt && max_abs_delta_f_hz.is_some_and(|d| d <= STABILITY_ENVELOPE_HZ),
        layer: 2,
        max_latency_ms: breaks.iter().filter_map(|e| e.get_u64("latency_ms")).max(),
        breaks: breaks.len(),
        escalated: in_phase(events, "B").any(|e| e.event_kind == EventKind::BreakerEscalate),
        chain_events,
        first_break_ms,
        fallback_engaged_ms,
        max_abs_delta_f_hz,
    }
}

fn phase_c(events: &[AuditEvent]) -> PhaseCReport {
    let bid: Vec<&AuditEvent> = in_phase(events, "C").filter(|e| e.get("role") == Some("bid")).collect();
    let deny = bid.iter().find(|e| e.event_kind == EventKind::SidecarDeny);
    let allowed = bid.iter().any(|e| e.event_kind == EventKind::SidecarAllow);
    let mut deny_reasons: Vec<String> = deny
        .and_then(|e| e.get("policies"))
        .map(|p| p.split(',').map(str::to_string).collect())
        .unwrap_or_default();
    deny_reasons.sort();
    PhaseCReport {
        contained: deny.is_some() && !allowed,
        layer: 3,
        deny_reasons,
        violation_factor: deny.and_then(|e| e.get_u64("violation_factor")),
        ceiling_usd_mwh: deny.and_then(|e| e.get_f64("ceiling")),
        status_code: bid.last().and_then(|e| e.get_u64("status_code")).map(|c| c as u16),
    }
}

fn canary(events: &[AuditEvent]) -> CanaryReport {
    let rollback = in_phase(events, "canary").find(|e| e.event_kind == EventKind::CanaryRollback);
    CanaryReport {
        rolled_back: rollback.is_some(),
        reasons: rollback
            .and_then(|e| e.get("reasons"))
            .map(|r| r.split(',').map(str::to_string).collect())
            .unwrap_or_default(),
    }
}

/// Rebuilds the report from an audit log alone.
pub fn compile_report(events: &[AuditEvent], seed: u64) -> ScenarioReport {
    let signatures: Vec<&AuditEvent> = events
        .iter()
        .filter(|e| e.event_kind == EventKind::MultiVectorSignature)
        .collect();
    let exercised: BTreeSet<u8> = events.iter().map(|e| row_for(e.event_kind).number()).collect();
    let (a, b, c) = (phase_a(events), phase_b(events), phase_c(events));
    let all_contained = a.contained && b.contained && c.contained;
    ScenarioReport {
        report_version: REPORT_VERSION,
        deterministic_seed: seed,
        phase_a: a,
        phase_b: b,
        phase_c: c,
        canary: canary(events),
        correlation: CorrelationReport {
            signature_emitted: !signatures.is_empty(),
            signatures: signatures.len(),
            linked_event_ids: signatures.iter().flat_map(|s| linked_ids(s)).collect(),
        },
        compliance_rows_static_only: STATIC_ONLY_ROWS
            .iter()
            .map(|r| r.number())
            .filter(|n| !exercised.contains(n))
            .collect(),
        compliance_rows_exercised: exercised.into_iter().collect(),
        all_contained,
    }
}

pub fn report_json(report: &ScenarioReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}
