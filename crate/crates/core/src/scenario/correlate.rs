use crate::audit::{AuditEvent, EventKind};

pub const CORRELATION_CONTROL: &str = "SIEM_CORRELATION";

/// Single-linkage clustering of `DLQ_ROUTE` and `BREAKER_BREAK` events:
/// consecutive events no more than `window_ms` apart share a cluster. Every
/// maximal cluster holding both kinds yields one signature whose
/// `linked_event_ids` are indices into `events`.
///
/// Signatures are stamped with the timestamp of the last event in `events`
/// so they can be appended to the same log.
pub fn correlate(events: &[AuditEvent], window_ms: u64) -> Vec<AuditEvent> {
    let Some(stamp) = events.last().map(|e| e.ts_ms) else {
        return Vec::new();
    };
    let relevant: Vec<(usize, &AuditEvent)> = events
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e.event_kind, EventKind::DlqRoute | EventKind::BreakerBreak))
        .collect();

    let mut clusters: Vec<Vec<(usize, &AuditEvent)>> = Vec::new();
    for (i, e) in relevant {
        match clusters.last_mut() {
            Some(c) if e.ts_ms.saturating_sub(c.last().expect("clusters are non-empty").1.ts_ms) <= window_ms => {
                c.push((i, e))
            }
            _ => clusters.push(vec![(i, e)]),
        }
    }

    clusters
        .into_iter()
        .filter(|c| {
            c.iter().any(|(_, e)| e.event_kind == EventKind::DlqRoute)
                && c.iter().any(|(_, e)| e.event_kind == EventKind::BreakerBreak)
        })
        .map(|c| {
            let ids: Vec<String> = c.iter().map(|(i, _)| i.to_string()).collect();
            let dlq = c.iter().filter(|(_, e)| e.event_kind == EventKind::DlqRoute).count();
            AuditEvent::new(stamp, EventKind::MultiVectorSignature, CORRELATION_CONTROL)
                .with("linked_event_ids", ids.join(","))
                .with("dlq_events", dlq)
                .with("breaker_events", c.len() - dlq)
                .with("first_ts_ms", c[0].1.ts_ms)
                .with("last_ts_ms", c[c.len() - 1].1.ts_ms)
                .with("window_ms", window_ms)
        })
        .collect()
}

pub fn linked_ids(signature: &AuditEvent) -> Vec<usize> {
    signature
        .get("linked_event_ids")
        .map(|s| s.split(',').filter_map(|x| x.parse().ok()).collect())
        .unwrap_or_default()
}
