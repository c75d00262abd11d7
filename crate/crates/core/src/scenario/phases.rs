use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::datafactory::{FrequencyMeasurement, GridParameters, Histogram, ReferenceObservation, TelemetryBatch};
use crate::governance::{CallKind, Prediction, ToolCall};
use crate::identity::WorkloadCredential;

/// `n` zero-mean Gaussian draws with the sample mean removed exactly.
pub fn centered_noise<R: Rng>(rng: &mut R, n: usize, sigma: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, sigma).expect("sigma validated positive");
    let mut v: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    let mean = v.iter().sum::<f64>() / n as f64;
    for x in &mut v {
        *x -= mean;
    }
    v
}

/// Baseline histogram of historical within-batch fluctuations over +-3 sigma.
pub fn baseline_histogram<R: Rng>(rng: &mut R, samples: usize, sigma: f64, bins: usize) -> Histogram {
    let edges = Histogram::uniform_edges(-3.0 * sigma, 3.0 * sigma, bins).expect("validated shape");
    Histogram::from_samples(edges, centered_noise(rng, samples, sigma)).expect("validated shape")
}

pub fn reference_pmus<R: Rng>(rng: &mut R, count: usize, sigma: f64, ts_ms: u64) -> Vec<ReferenceObservation> {
    let normal = Normal::new(0.0, sigma).expect("sigma validated positive");
    (0..count)
        .map(|i| ReferenceObservation {
            node_id: format!("pmu-{:02}", i + 1),
            delta_f_hz: normal.sample(rng),
            timestamp: ts_ms,
        })
        .collect()
}

/// Shape of one Phase A telemetry batch.
#[derive(Debug, Clone)]
pub struct BatchSpec {
    pub batch_id: String,
    pub tenant_id: String,
    pub source_id: String,
    pub credential: WorkloadCredential,
    pub schema_version: u32,
    pub delta_f_hz: f64,
    pub sigma_hz: f64,
    pub records: usize,
    pub record_interval_ms: u64,
    /// Timestamp of the last record.
    pub end_ms: u64,
}

/// A batch whose mean frequency is `f0 + delta_f_hz` and whose fluctuations
/// carry the historical spread, so only the physics gate can tell it apart.
pub fn build_phase_a<R: Rng>(gp: &GridParameters, spec: &BatchSpec, rng: &mut R) -> TelemetryBatch {
    let noise = centered_noise(rng, spec.records, spec.sigma_hz);
    let span = (spec.records as u64 - 1) * spec.record_interval_ms;
    let first = spec.end_ms.saturating_sub(span);
    let mean_power = gp.rated_capacity_mw / 16.0;
    let records = noise
        .iter()
        .enumerate()
        .map(|(i, n)| FrequencyMeasurement {
            timestamp: first + i as u64 * spec.record_interval_ms,
            node_id: format!("{}", 440_100 + (i % 8)),
            freq_hz: gp.nominal_freq_f0 + spec.delta_f_hz + n,
            power_mw: mean_power,
        })
        .collect();
    TelemetryBatch {
        batch_id: spec.batch_id.clone(),
        tenant_id: spec.tenant_id.clone(),
        source_id: spec.source_id.clone(),
        credential: spec.credential.clone(),
        schema_version: spec.schema_version,
        records,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencySample {
    pub ts_ms: u64,
    pub latency_ms: u64,
}

/// Sponge-attack latency samples every `interval_ms` over `[start, start + duration]`.
pub fn build_phase_b(start_ms: u64, duration_ms: u64, latency_ms: u64, interval_ms: u64) -> Vec<LatencySample> {
    assert!(interval_ms > 0, "interval must be positive");
    (0..=duration_ms / interval_ms)
        .map(|k| LatencySample {
            ts_ms: start_ms + k * interval_ms,
            latency_ms,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseC {
    /// Exogenous market prices fed to the sidecar before any call.
    pub price_feed: Vec<(u64, f64)>,
    pub calls: Vec<ToolCall>,
}

pub const BID_CALL_ID: &str = "phase-c/bid";

/// `signals` dispatch signals ten seconds apart, then the bid ten seconds
/// after the last one. The feed holds the price flat over the preceding
/// fifty minutes.
pub fn build_phase_c(start_ms: u64, agent: &str, signals: usize, dispatch_mw: f64, price: f64, bid: f64) -> PhaseC {
    let price_feed = (0..6u64)
        .rev()
        .map(|k| (start_ms.saturating_sub(k * 600_000), price))
        .collect();
    let mut calls: Vec<ToolCall> = (0..signals)
        .map(|i| ToolCall {
            call_id: format!("phase-c/signal-{}", i + 1),
            agent_id: agent.to_string(),
            kind: CallKind::DispatchSignal,
            magnitude: dispatch_mw,
            timestamp: start_ms + i as u64 * 10_000,
        })
        .collect();
    calls.push(ToolCall {
        call_id: BID_CALL_ID.to_string(),
        agent_id: agent.to_string(),
        kind: CallKind::MarketBid,
        magnitude: bid,
        timestamp: start_ms + signals as u64 * 10_000,
    });
    PhaseC { price_feed, calls }
}

/// Predictions for the canary sub-scenario. Candidate-model predictions are
/// offset by `shift_hz`, the bias a model trained on Phase A data would learn.
pub fn canary_predictions<R: Rng>(rng: &mut R, f0: f64, sigma: f64, shift_hz: f64, canary: bool, n: usize) -> Vec<Prediction> {
    let freq = Normal::new(0.0, sigma).expect("sigma validated positive");
    let mw = Normal::new(0.0, 20.0).expect("static");
    (0..n)
        .map(|_| Prediction {
            freq_hz: f0 + if canary { shift_hz } else { 0.0 } + freq.sample(rng),
            dispatch_mw: 500.0 + mw.sample(rng),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::governance::{sidecar_evaluate, Policy, PolicyConfig, SidecarState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn centered_noise_has_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = centered_noise(&mut rng, 200, 0.015);
        assert!(v.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn phase_b_default_samples() {
        let s = build_phase_b(20_000, 120_000, 340, 30_000);
        assert_eq!(s.len(), 5);
        assert_eq!(s[0].ts_ms, 20_000);
        assert_eq!(s[4].ts_ms, 140_000);
    }

    fn run(c: &PhaseC, s: &mut SidecarState, cfg: &PolicyConfig) -> Vec<crate::governance::Decision> {
        for (ts, p) in &c.price_feed {
            s.record_price(*ts, *p, cfg.financial_window_ms).unwrap();
        }
        c.calls
            .iter()
            .map(|call| {
                let (d, next) = sidecar_evaluate(call, s, cfg, call.timestamp);
                *s = next;
                d
            })
            .collect()
    }

    #[test]
    fn phase_c_bid_is_denied_on_both_policies() {
        let c = build_phase_c(1_000_000, "a", 4, 50.0, 42.0, 9000.0);
        let d = run(&c, &mut SidecarState::new(), &PolicyConfig::default());
        assert!(d[..4].iter().all(|d| d.is_allow()));
        let bid = &d[4];
        assert!(bid.denied_by(Policy::Financial) && bid.denied_by(Policy::Velocity));
        assert_eq!(bid.reasons.len(), 2);
        assert_eq!(bid.violation_factor, Some(186));
    }

    #[test]
    fn removing_either_violation_still_denies() {
        // without the velocity breach
        let c = build_phase_c(1_000_000, "a", 0, 50.0, 42.0, 9000.0);
        let d = run(&c, &mut SidecarState::new(), &PolicyConfig::default());
        assert_eq!(d[0].reasons.iter().map(|r| r.policy).collect::<Vec<_>>(), vec![Policy::Financial]);
        // without the financial breach
        let c = build_phase_c(1_000_000, "a", 4, 50.0, 42.0, 40.0);
        let d = run(&c, &mut SidecarState::new(), &PolicyConfig::default());
        assert_eq!(d[4].reasons.iter().map(|r| r.policy).collect::<Vec<_>>(), vec![Policy::Velocity]);
    }

    #[test]
    fn high_average_and_empty_window_allow_the_bid() {
        let c = build_phase_c(1_000_000, "a", 0, 50.0, 8000.0, 9000.0);
        let d = run(&c, &mut SidecarState::new(), &PolicyConfig::default());
        assert!(d[0].is_allow());
        assert!((d[0].ceiling.unwrap() - 9200.0).abs() < 1e-6);
    }

    #[test]
    fn price_feed_stays_inside_the_hour() {
        let c = build_phase_c(10_000_000, "a", 4, 50.0, 42.0, 9000.0);
        let bid_ts = c.calls.last().unwrap().timestamp;
        assert!(c.price_feed.iter().all(|(t, _)| *t + 3_600_000 > bid_ts && *t <= bid_ts));
    }
}
