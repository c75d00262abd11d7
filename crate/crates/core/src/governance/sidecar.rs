use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::GovernanceError;
use crate::audit::{AuditEvent, EventKind};

pub const SIDECAR_CONTROL: &str = "GOVERNANCE_SIDECAR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CallKind {
    /// Magnitude in MW.
    DispatchSignal,
    /// Magnitude in $/MWh.
    MarketBid,
}

impl fmt::Display for CallKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CallKind::DispatchSignal => "DispatchSignal",
            CallKind::MarketBid => "MarketBid",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: String,
    pub agent_id: String,
    pub kind: CallKind,
    pub magnitude: f64,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarState {
    pub signal_timestamps: BTreeMap<String, Vec<u64>>,
    /// Exogenous market prices as `(ts_ms, $/MWh)`.
    pub price_samples: Vec<(u64, f64)>,
    pub available: bool,
}

impl Default for SidecarState {
    fn default() -> Self {
        Self {
            signal_timestamps: BTreeMap::new(),
            price_samples: Vec::new(),
            available: true,
        }
    }
}

impl SidecarState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a market-feed sample and drops samples that fell out of the window.
    pub fn record_price(&mut self, ts_ms: u64, price: f64, window_ms: u64) -> Result<(), GovernanceError> {
        if !price.is_finite() || price < 0.0 {
            return Err(GovernanceError::InvalidConfig(format!("price sample {price} is not a finite non-negative number")));
        }
        if self.price_samples.last().is_some_and(|(t, _)| *t > ts_ms) {
            return Err(GovernanceError::OutOfOrder(ts_ms));
        }
        self.price_samples.push((ts_ms, price));
        self.price_samples.retain(|(t, _)| in_window(*t, ts_ms, window_ms));
        Ok(())
    }

    pub fn signals_in_window(&self, agent_id: &str, now: u64, window_ms: u64) -> usize {
        self.signal_timestamps
            .get(agent_id)
            .map_or(0, |ts| ts.iter().filter(|t| in_window(**t, now, window_ms)).count())
    }
}

/// `ts` lies in `(now - window_ms, now]`.
pub(crate) fn in_window(ts: u64, now: u64, window_ms: u64) -> bool {
    ts <= now && ts + window_ms > now
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default = "default_velocity_limit")]
    pub velocity_limit: u32,
    #[serde(default = "default_financial_fraction")]
    pub financial_fraction: f64,
    #[serde(default = "default_velocity_window_ms")]
    pub velocity_window_ms: u64,
    #[serde(default = "default_financial_window_ms")]
    pub financial_window_ms: u64,
    /// `None` disables the scope policy.
    #[serde(default)]
    pub scope_allowlist: Option<BTreeMap<String, BTreeSet<CallKind>>>,
}

fn default_velocity_limit() -> u32 {
    5
}
fn default_financial_fraction() -> f64 {
    0.15
}
fn default_velocity_window_ms() -> u64 {
    60_000
}
fn default_financial_window_ms() -> u64 {
    3_600_000
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            velocity_limit: default_velocity_limit(),
            financial_fraction: default_financial_fraction(),
            velocity_window_ms: default_velocity_window_ms(),
            financial_window_ms: default_financial_window_ms(),
            scope_allowlist: None,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), GovernanceError> {
        if self.velocity_limit < 1 {
            return Err(GovernanceError::InvalidConfig("velocity_limit must be at least 1".into()));
        }
        if !(self.financial_fraction > 0.0) || !self.financial_fraction.is_finite() {
            return Err(GovernanceError::InvalidConfig("financial_fraction must be positive".into()));
        }
        if self.velocity_window_ms == 0 || self.financial_window_ms == 0 {
            return Err(GovernanceError::InvalidConfig("policy windows must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Policy {
    Velocity,
    Financial,
    Scope,
    FailSafe,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Velocity => "Velocity",
            Policy::Financial => "Financial",
            Policy::Scope => "Scope",
            Policy::FailSafe => "FailSafe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenyReason {
    pub policy: Policy,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Allow,
    Deny,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub verdict: Verdict,
    pub status_code: u16,
    pub reasons: Vec<DenyReason>,
    /// Bid ceiling in $/MWh when the financial policy was evaluated.
    pub ceiling: Option<f64>,
    /// `floor(magnitude / ceiling)` for a financial denial.
    pub violation_factor: Option<u64>,
    pub audit_events: Vec<AuditEvent>,
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        self.verdict == Verdict::Allow
    }

    pub fn denied_by(&self, policy: Policy) -> bool {
        self.reasons.iter().any(|r| r.policy == policy)
    }
}

/// Mean price over `(now - window_ms, now]`, or `None` when no sample falls inside.
pub fn rolling_average(samples: &[(u64, f64)], now: u64, window_ms: u64) -> Option<f64> {
    let (sum, n) = samples
        .iter()
        .filter(|(t, _)| in_window(*t, now, window_ms))
        .fold((0.0, 0usize), |(s, n), (_, p)| (s + p, n + 1));
    (n > 0).then(|| sum / n as f64)
}

// Slack for products like 1.15 * 42 that miss their decimal value by an ulp.
const CEILING_REL_TOL: f64 = 1e-12;

pub fn sidecar_evaluate(call: &ToolCall, state: &SidecarState, cfg: &PolicyConfig, now: u64) -> (Decision, SidecarState) {
    let mut reasons = Vec::new();
    let mut ceiling = None;
    let mut violation_factor = None;

    if !state.available {
        reasons.push(DenyReason {
            policy: Policy::FailSafe,
            detail: "sidecar unavailable; deny-all".into(),
        });
        let decision = finish(call, now, reasons, None, None);
        return (decision, state.clone());
    }

    if !call.magnitude.is_finite() || call.magnitude < 0.0 {
        reasons.push(DenyReason {
            policy: Policy::FailSafe,
            detail: format!("malformed magnitude {}", call.magnitude),
        });
        let decision = finish(call, now, reasons, None, None);
        return (decision, state.clone());
    }

    if let Some(allow) = &cfg.scope_allowlist {
        if !allow.get(&call.agent_id).is_some_and(|kinds| kinds.contains(&call.kind)) {
            reasons.push(DenyReason {
                policy: Policy::Scope,
                detail: format!("{} is not permitted to issue {}", call.agent_id, call.kind),
            });
        }
    }

    let prior = state.signals_in_window(&call.agent_id, now, cfg.velocity_window_ms);
    if prior as u64 + 1 >= u64::from(cfg.velocity_limit) {
        reasons.push(DenyReason {
            policy: Policy::Velocity,
            detail: format!(
                "{prior} signals already in the last {} ms; limit {}",
                cfg.velocity_window_ms, cfg.velocity_limit
            ),
        });
    }

    if call.kind == CallKind::MarketBid {
        match rolling_average(&state.price_samples, now, cfg.financial_window_ms) {
            None => reasons.push(DenyReason {
                policy: Policy::Financial,
                detail: "no rolling average".into(),
            }),
            Some(avg) => {
                let c = (1.0 + cfg.financial_fraction) * avg;
                ceiling = Some(c);
                if call.magnitude > c * (1.0 + CEILING_REL_TOL) {
                    let factor = (call.magnitude / c).floor() as u64;
                    violation_factor = Some(factor);
                    reasons.push(DenyReason {
                        policy: Policy::Financial,
                        detail: format!("bid {:.2} exceeds ceiling {c:.2} by a factor of {factor}", call.magnitude),
                    });
                }
            }
        }
    }

    let mut next = state.clone();
    if reasons.is_empty() {
        let window = next.signal_timestamps.entry(call.agent_id.clone()).or_default();
        window.push(now);
        window.retain(|t| in_window(*t, now, cfg.velocity_window_ms));
    }
    (finish(call, now, reasons, ceiling, violation_factor), next)
}

fn finish(call: &ToolCall, now: u64, reasons: Vec<DenyReason>, ceiling: Option<f64>, violation_factor: Option<u64>) -> Decision {
    let allow = reasons.is_empty();
    let kind = if allow { EventKind::SidecarAllow } else { EventKind::SidecarDeny };
    let status: u16 = if allow { 200 } else { 403 };
    let mut ev = AuditEvent::new(now, kind, SIDECAR_CONTROL)
        .with("call_id", &call.call_id)
        .with("agent_id", &call.agent_id)
        .with("kind", call.kind)
        .with("magnitude", call.magnitude)
        .with("status_code", status);
    if !allow {
        let policies: Vec<&str> = reasons.iter().map(|r| r.policy.as_str()).collect();
        ev = ev.with("policies", policies.join(","));
        for r in &reasons {
            ev = ev.with(&format!("reason.{}", r.policy.as_str()), &r.detail);
        }
    }
    if let Some(c) = ceiling {
        ev = ev.with("ceiling", format!("{c:.2}"));
    }
    if let Some(f) = violation_factor {
        ev = ev.with("violation_factor", f);
    }
    Decision {
        verdict: if allow { Verdict::Allow } else { Verdict::Deny },
        status_code: status,
        reasons,
        ceiling,
        violation_factor,
        audit_events: vec![ev],
    }
}
