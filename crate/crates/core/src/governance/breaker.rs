use serde::{Deserialize, Serialize};

use super::sidecar::in_window;
use super::GovernanceError;
use crate::audit::{AuditEvent, EventKind};

pub const BREAKER_CONTROL: &str = "LATENCY_CIRCUIT_BREAKER";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BreakerMode {
    Closed,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BreakerConfig {
    #[serde(default = "default_budget")]
    pub latency_budget_ms: u64,
    #[serde(default = "default_escalation_window")]
    pub escalation_window_ms: u64,
    #[serde(default = "default_escalation_threshold")]
    pub escalation_count_threshold: u32,
}

fn default_budget() -> u64 {
    200
}
fn default_escalation_window() -> u64 {
    90_000
}
fn default_escalation_threshold() -> u32 {
    3
}

impl Default for BreakerConfig {
    fn default() -> Self {
        Self {
            latency_budget_ms: default_budget(),
            escalation_window_ms: default_escalation_window(),
            escalation_count_threshold: default_escalation_threshold(),
        }
    }
}

impl BreakerConfig {
    pub fn validate(&self) -> Result<(), GovernanceError> {
        if self.escalation_window_ms == 0 || self.escalation_count_threshold == 0 {
            return Err(GovernanceError::InvalidConfig(
                "escalation window and threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakerState {
    pub mode: BreakerMode,
    pub latency_budget_ms: u64,
    /// Every budget violation ever recorded, in order.
    pub violation_timestamps: Vec<u64>,
    pub escalation_window_ms: u64,
    pub escalation_count_threshold: u32,
    pub fallback_engaged: bool,
    pub escalated: bool,
}

impl Default for BreakerState {
    fn default() -> Self {
        Self::new(BreakerConfig::default())
    }
}

impl BreakerState {
    pub fn new(cfg: BreakerConfig) -> Self {
        Self {
            mode: BreakerMode::Closed,
            latency_budget_ms: cfg.latency_budget_ms,
            violation_timestamps: Vec::new(),
            escalation_window_ms: cfg.escalation_window_ms,
            escalation_count_threshold: cfg.escalation_count_threshold,
            fallback_engaged: false,
            escalated: false,
        }
    }

    pub fn violations_in_window(&self, now: u64) -> usize {
        self.violation_timestamps
            .iter()
            .filter(|t| in_window(**t, now, self.escalation_window_ms))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BreakerAction {
    Pass,
    Break,
    Escalate,
}

impl BreakerAction {
    pub fn status_code(self) -> u16 {
        match self {
            BreakerAction::Pass => 200,
            BreakerAction::Break | BreakerAction::Escalate => 503,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakerOutcome {
    pub action: BreakerAction,
    pub audit_events: Vec<AuditEvent>,
}

/// Records one inference latency sample.
///
/// Every budget violation logs `BREAKER_BREAK`; the violation that completes
/// the escalation count also logs the escalation chain.
pub fn breaker_record_latency(b: &BreakerState, latency_ms: u64, now: u64) -> (BreakerOutcome, BreakerState) {
    let mut next = b.clone();
    if latency_ms <= b.latency_budget_ms {
        return (
            BreakerOutcome {
                action: BreakerAction::Pass,
                audit_events: Vec::new(),
            },
            next,
        );
    }
    next.mode = BreakerMode::Open;
    next.fallback_engaged = true;
    next.violation_timestamps.push(now);
    let in_window = next.violations_in_window(now);

    let mut events = vec![AuditEvent::new(now, EventKind::BreakerBreak, BREAKER_CONTROL)
        .with("latency_ms", latency_ms)
        .with("budget_ms", b.latency_budget_ms)
        .with("status_code", 503)
        .with("fallback", "droop")
        .with("violations_in_window", in_window)];

    let mut action = BreakerAction::Break;
    if !next.escalated && in_window >= next.escalation_count_threshold as usize {
        next.escalated = true;
        action = BreakerAction::Escalate;
        events.push(
            AuditEvent::new(now, EventKind::BreakerEscalate, BREAKER_CONTROL)
                .with("violations_in_window", in_window)
                .with("window_ms", next.escalation_window_ms),
        );
        events.push(AuditEvent::new(now, EventKind::IrPlanInvoked, "CIP-008-7.1-R1").with("plan", "incident response"));
        events.push(AuditEvent::new(now, EventKind::EisacNotified, "CIP-008-7.1-R2").with("recipient", "E-ISAC"));
        events.push(
            AuditEvent::new(now, EventKind::RecoveryDocumented, "CIP-009-7.1-R1").with("plan", "recovery"),
        );
    }
    (
        BreakerOutcome {
            action,
            audit_events: events,
        },
        next,
    )
}

/// Manual re-close after recovery. Escalation history is kept.
pub fn breaker_reset(b: &BreakerState, _now: u64) -> Result<BreakerState, GovernanceError> {
    if b.mode == BreakerMode::Closed {
        return Err(GovernanceError::AlreadyClosed);
    }
    let mut next = b.clone();
    next.mode = BreakerMode::Closed;
    next.fallback_engaged = false;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn over_budget_breaks() {
        let (out, s) = breaker_record_latency(&BreakerState::default(), 340, 1_000);
        assert_eq!(out.action, BreakerAction::Break);
        assert_eq!(out.action.status_code(), 503);
        assert!(s.fallback_engaged);
        assert_eq!(s.mode, BreakerMode::Open);
        assert_eq!(out.audit_events.len(), 1);
        assert_eq!(out.audit_events[0].event_kind, EventKind::BreakerBreak);
    }

    #[test]
    fn under_and_at_budget_pass() {
        let (out, s) = breaker_record_latency(&BreakerState::default(), 150, 1_000);
        assert_eq!(out.action, BreakerAction::Pass);
        assert_eq!(s, BreakerState::default());
        let (out, _) = breaker_record_latency(&BreakerState::default(), 200, 1_000);
        assert_eq!(out.action, BreakerAction::Pass);
    }

    #[test]
    fn third_violation_in_window_escalates_once() {
        let mut s = BreakerState::default();
        let mut actions = Vec::new();
        let mut kinds = Vec::new();
        for t in [0, 40_000, 80_000, 85_000] {
            let (out, next) = breaker_record_latency(&s, 340, t);
            actions.push(out.action);
            kinds.extend(out.audit_events.iter().map(|e| e.event_kind));
            s = next;
        }
        assert_eq!(
            actions,
            vec![BreakerAction::Break, BreakerAction::Break, BreakerAction::Escalate, BreakerAction::Break]
        );
        for k in [EventKind::IrPlanInvoked, EventKind::EisacNotified, EventKind::RecoveryDocumented] {
            assert_eq!(kinds.iter().filter(|x| **x == k).count(), 1);
        }
        assert!(s.escalated);
    }

    #[test]
    fn violations_spread_beyond_window_do_not_escalate() {
        let mut s = BreakerState::default();
        for t in [0, 90_000, 180_000] {
            let (out, next) = breaker_record_latency(&s, 340, t);
            assert_eq!(out.action, BreakerAction::Break);
            s = next;
        }
        assert!(!s.escalated);
    }

    #[test]
    fn reset_sequence() {
        let (_, open) = breaker_record_latency(&BreakerState::default(), 340, 0);
        let closed = breaker_reset(&open, 1).unwrap();
        assert_eq!(closed.mode, BreakerMode::Closed);
        assert!(!closed.fallback_engaged);
        assert_eq!(breaker_reset(&closed, 2), Err(GovernanceError::AlreadyClosed));
        let (out, reopened) = breaker_record_latency(&closed, 201, 3);
        assert_eq!(out.action, BreakerAction::Break);
        assert_eq!(reopened.mode, BreakerMode::Open);
    }

    #[test]
    fn reset_keeps_escalation_history() {
        let mut s = BreakerState::default();
        for t in [0, 1, 2] {
            s = breaker_record_latency(&s, 999, t).1;
        }
        assert!(s.escalated);
        assert!(breaker_reset(&s, 3).unwrap().escalated);
    }
}
