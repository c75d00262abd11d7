use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GovernanceError;
use crate::audit::{AuditEvent, EventKind};
use crate::datafactory::{kl_divergence, Histogram};

pub const CANARY_CONTROL: &str = "PHYSICS_AWARE_CANARY";

const HIST_LO_HZ: f64 = 58.0;
const HIST_HI_HZ: f64 = 62.0;
const HIST_BINS: usize = 20;
const KL_EPSILON: f64 = 1e-9;

pub const MIN_FRACTION: f64 = 0.05;
pub const MAX_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanaryConfig {
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default = "default_kl_threshold")]
    pub kl_threshold_nats: f64,
    #[serde(default = "default_band")]
    pub freq_band: [f64; 2],
    pub rated_capacity_mw: f64,
}

fn default_fraction() -> f64 {
    0.10
}
fn default_kl_threshold() -> f64 {
    0.1
}
fn default_band() -> [f64; 2] {
    [59.0, 61.0]
}

impl CanaryConfig {
    pub fn new(rated_capacity_mw: f64) -> Self {
        Self {
            fraction: default_fraction(),
            kl_threshold_nats: default_kl_threshold(),
            freq_band: default_band(),
            rated_capacity_mw,
        }
    }

    pub fn validate(&self) -> Result<(), GovernanceError> {
        check_fraction(self.fraction)?;
        let [lo, hi] = self.freq_band;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(GovernanceError::InvalidConfig(format!("freq_band [{lo}, {hi}] is not an interval")));
        }
        if !(self.kl_threshold_nats >= 0.0) || !(self.rated_capacity_mw > 0.0) {
            return Err(GovernanceError::InvalidConfig(
                "kl_threshold_nats must be non-negative and rated_capacity_mw positive".into(),
            ));
        }
        Ok(())
    }
}

fn check_fraction(fraction: f64) -> Result<(), GovernanceError> {
    if (MIN_FRACTION..=MAX_FRACTION).contains(&fraction) {
        Ok(())
    } else {
        Err(GovernanceError::InvalidConfig(format!(
            "canary fraction {fraction} outside [{MIN_FRACTION}, {MAX_FRACTION}]"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arm {
    Canary,
    Baseline,
}

/// First 8 bytes of SHA-256 as a big-endian integer.
pub fn stable_hash(id: &str) -> u64 {
    let d = Sha256::digest(id.as_bytes());
    u64::from_be_bytes(d[..8].try_into().expect("sha256 output is 32 bytes"))
}

pub fn canary_route(batch_id: &str, fraction: f64) -> Result<Arm, GovernanceError> {
    check_fraction(fraction)?;
    let bucket = stable_hash(batch_id) % 10_000;
    Ok(if (bucket as f64) < fraction * 10_000.0 {
        Arm::Canary
    } else {
        Arm::Baseline
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub freq_hz: f64,
    pub dispatch_mw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RollbackReason {
    FrequencyBand,
    RatedCapacity,
    KlDrift,
}

impl RollbackReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RollbackReason::FrequencyBand => "frequency band",
            RollbackReason::RatedCapacity => "rated capacity",
            RollbackReason::KlDrift => "kl drift",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CanaryDecision {
    Promote,
    Rollback(Vec<RollbackReason>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanaryEvaluation {
    pub decision: CanaryDecision,
    pub kl_nats: f64,
    pub audit_events: Vec<AuditEvent>,
}

pub fn canary_evaluate(
    canary: &[Prediction],
    baseline: &[Prediction],
    cfg: &CanaryConfig,
    now: u64,
) -> Result<CanaryEvaluation, GovernanceError> {
    if canary.is_empty() || baseline.is_empty() {
        return Err(GovernanceError::EmptyPredictions);
    }
    cfg.validate()?;
    let [lo, hi] = cfg.freq_band;
    let mut reasons = Vec::new();
    // NaN fails the range check and so counts as out of band.
    if canary.iter().any(|p| !(lo..=hi).contains(&p.freq_hz)) {
        reasons.push(RollbackReason::FrequencyBand);
    }
    if canary.iter().any(|p| !(p.dispatch_mw <= cfg.rated_capacity_mw)) {
        reasons.push(RollbackReason::RatedCapacity);
    }

    let edges = Histogram::uniform_edges(HIST_LO_HZ, HIST_HI_HZ, HIST_BINS).expect("static histogram shape");
    let hist = |preds: &[Prediction]| {
        Histogram::from_samples(edges.clone(), preds.iter().map(|p| p.freq_hz).filter(|f| f.is_finite()))
            .expect("static histogram shape")
    };
    let (hc, hb) = (hist(canary), hist(baseline));
    let kl_nats = if hc.total() == 0 || hb.total() == 0 {
        f64::INFINITY
    } else {
        kl_divergence(&hc, &hb, KL_EPSILON).expect("same edges")
    };
    if !(kl_nats <= cfg.kl_threshold_nats) {
        reasons.push(RollbackReason::KlDrift);
    }

    let (decision, audit_events) = if reasons.is_empty() {
        (CanaryDecision::Promote, Vec::new())
    } else {
        let names: Vec<&str> = reasons.iter().map(|r| r.as_str()).collect();
        let max_freq = canary.iter().map(|p| p.freq_hz).fold(f64::NEG_INFINITY, f64::max);
        let ev = AuditEvent::new(now, EventKind::CanaryRollback, CANARY_CONTROL)
            .with("reasons", names.join(","))
            .with("kl_nats", kl_nats)
            .with("canary_predictions", canary.len())
            .with("max_freq_hz", max_freq);
        (CanaryDecision::Rollback(reasons), vec![ev])
    };
    Ok(CanaryEvaluation {
        decision,
        kl_nats,
        audit_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> CanaryConfig {
        CanaryConfig::new(2000.0)
    }

    fn steady(n: usize) -> Vec<Prediction> {
        (0..n)
            .map(|i| Prediction {
                freq_hz: 59.9 + 0.2 * (i % 5) as f64 / 4.0,
                dispatch_mw: 500.0,
            })
            .collect()
    }

    #[test]
    fn route_is_deterministic() {
        for id in ["a", "batch-17", "tso-a/rtu-01/0007"] {
            assert_eq!(canary_route(id, 0.07).unwrap(), canary_route(id, 0.07).unwrap());
        }
    }

    #[test]
    fn route_share_matches_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2026);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| {
                let id = format!("batch-{:016x}", rng.random::<u64>());
                canary_route(&id, 0.10).unwrap() == Arm::Canary
            })
            .count();
        let share = hits as f64 / n as f64;
        assert!((0.095..=0.105).contains(&share), "{share}");
    }

    #[test]
    fn route_rejects_fraction_outside_interval() {
        assert!(matches!(canary_route("x", 0.20), Err(GovernanceError::InvalidConfig(_))));
        assert!(matches!(canary_route("x", 0.04), Err(GovernanceError::InvalidConfig(_))));
        assert!(canary_route("x", 0.05).is_ok());
        assert!(canary_route("x", 0.10).is_ok());
    }

    #[test]
    fn out_of_band_rolls_back() {
        let mut c = steady(50);
        c[3].freq_hz = 61.5;
        let e = canary_evaluate(&c, &steady(50), &cfg(), 7).unwrap();
        match e.decision {
            CanaryDecision::Rollback(r) => assert!(r.contains(&RollbackReason::FrequencyBand)),
            d => panic!("{d:?}"),
        }
        assert_eq!(e.audit_events[0].event_kind, EventKind::CanaryRollback);
        assert!(e.audit_events[0].tags_match_map());
    }

    #[test]
    fn identical_promotes() {
        let e = canary_evaluate(&steady(50), &steady(50), &cfg(), 7).unwrap();
        assert_eq!(e.decision, CanaryDecision::Promote);
        assert_eq!(e.kl_nats, 0.0);
        assert!(e.audit_events.is_empty());
    }

    #[test]
    fn over_capacity_rolls_back() {
        let mut c = steady(50);
        c[0].dispatch_mw = 1.2 * 2000.0;
        let e = canary_evaluate(&c, &steady(50), &cfg(), 7).unwrap();
        assert_eq!(e.decision, CanaryDecision::Rollback(vec![RollbackReason::RatedCapacity]));
    }

    #[test]
    fn shifted_distribution_rolls_back_on_kl() {
        let c: Vec<Prediction> = steady(50)
            .into_iter()
            .map(|p| Prediction {
                freq_hz: p.freq_hz - 0.6,
                ..p
            })
            .collect();
        let e = canary_evaluate(&c, &steady(50), &cfg(), 7).unwrap();
        assert_eq!(e.decision, CanaryDecision::Rollback(vec![RollbackReason::KlDrift]));
        assert!(e.kl_nats > 0.1);
    }

    #[test]
    fn boundary_values_stay_in_band() {
        let c = vec![
            Prediction { freq_hz: 59.0, dispatch_mw: 2000.0 },
            Prediction { freq_hz: 61.0, dispatch_mw: 0.0 },
        ];
        let e = canary_evaluate(&c, &c, &cfg(), 0).unwrap();
        assert_eq!(e.decision, CanaryDecision::Promote);
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(canary_evaluate(&[], &steady(1), &cfg(), 0), Err(GovernanceError::EmptyPredictions));
        assert_eq!(canary_evaluate(&steady(1), &[], &cfg(), 0), Err(GovernanceError::EmptyPredictions));
    }
}
