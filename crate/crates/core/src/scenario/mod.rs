//! Scripted three-phase attack against the layered defenses.
//!
//! Timeline, relative to `scenario.start_ms`:
//!
//! | offset | step |
//! |---|---|
//! | 0 s | model artifact signed and stored in the registry |
//! | 5 s | control batch (small deviation, valid credential) |
//! | 10 s | Phase A: poisoned batches A1 (revoked source) and A2 (valid source) |
//! | 20 s | Phase B: sponge-attack latency samples, grid ticks every `dt_ms` |
//! | B end + 10 s | Phase C: dispatch signals then the market bid |
//! | C end + 20 s | canary evaluation of a candidate model |
//! | last | correlation signatures |
//!
//! The report is compiled from the audit log alone; see [`compile_report`].

mod config;
mod correlate;
mod phases;
mod report;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{load_config, parse_config, ConfigError, IdentityConfig, ScenarioConfig, ScenarioParams, SupplyChainConfig};
pub use correlate::{correlate, linked_ids, CORRELATION_CONTROL};
pub use phases::{
    baseline_histogram, build_phase_a, build_phase_b, build_phase_c, canary_predictions, centered_noise,
    reference_pmus, BatchSpec, LatencySample, PhaseC, BID_CALL_ID,
};
pub use report::{
    compile_report, report_json, CanaryReport, CorrelationReport, PhaseAReport, PhaseBReport, PhaseCReport,
    ScenarioReport, VariantReport, REPORT_VERSION, STABILITY_ENVELOPE_HZ, STATIC_ONLY_ROWS,
};

use crate::audit::{AuditError, AuditEvent, AuditLog, EventKind};
use crate::datafactory::{DataError, DlqStore, GateOverrides, IngestContext, Keystore, SecureDataFactory};
use crate::governance::{
    breaker_record_latency, canary_evaluate, canary_route, sidecar_evaluate, Arm, BreakerAction, BreakerState,
    GovernanceError, SidecarState,
};
use crate::gridsim::{engage_fallback, grid_step, GridState};
use crate::identity::{decode_key_hex, issue_credential, revoke, RevocationList, TrustRoot};
use crate::supplychain::{sign_artifact, ModelArtifact, Registry, SignerKey, SupplyChainError};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("data factory: {0}")]
    Data(#[from] DataError),
    #[error("supply chain: {0}")]
    SupplyChain(#[from] SupplyChainError),
    #[error("governance: {0}")]
    Governance(#[from] GovernanceError),
    #[error("audit log: {0}")]
    Audit(#[from] AuditError),
}

/// Test and tooling hooks for a run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Removes the physics gate from the ingest pipeline.
    pub disable_physics_check: bool,
    /// Persist dead-lettered batches here instead of in memory.
    pub dlq_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub report: ScenarioReport,
    pub events: Vec<AuditEvent>,
    pub grid_trace: Vec<GridState>,
    pub accepted_batch_ids: Vec<String>,
}

fn tagged(events: Vec<AuditEvent>, pairs: &[(&str, &str)]) -> Vec<AuditEvent> {
    events
        .into_iter()
        .map(|mut e| {
            for (k, v) in pairs {
                e = e.with(k, v);
            }
            e
        })
        .collect()
}

pub fn run_scenario(cfg: &ScenarioConfig, seed: u64, opts: &RunOptions) -> Result<ScenarioOutput, ScenarioError> {
    cfg.validate()?;
    let s = &cfg.scenario;
    let id = &cfg.identity;
    let gp = &cfg.grid;
    let t0 = s.start_ms;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log = AuditLog::new();

    // Setup: signed model into the write-once registry.
    let signer = SignerKey::from_hex(&cfg.supply_chain.signer_seed_hex)?;
    let registry = Registry::in_memory(signer.public_key());
    let artifact = ModelArtifact {
        content: serde_json::to_vec(&cfg.supply_chain.model).expect("model serializes"),
        manifest: BTreeMap::from([
            ("model_name".to_string(), cfg.supply_chain.model_name.clone()),
            ("version".to_string(), cfg.supply_chain.model_version.clone()),
        ]),
        created_at: t0,
    };
    let signed = sign_artifact(artifact, &signer, &cfg.supply_chain.signer_id, &cfg.supply_chain.ci_run_id, t0)?;
    let receipt = registry.put(&signed, t0)?;
    log.extend(tagged(vec![receipt.audit_event(&signed, t0)], &[("phase", "setup")]))?;

    // Phase A and its control batch.
    let root = TrustRoot::from_hex(&id.trust_root_seed_hex).map_err(|e| ConfigError {
        file: None,
        field: "identity.trust_root_seed_hex".into(),
        message: e.to_string(),
    })?;
    let validity = std::num::NonZeroU64::new(id.credential_validity_ms).expect("validated");
    let revocations = revoke(&RevocationList::new(), &id.revoked_subject, t0);
    let mut keystore = Keystore::new();
    keystore.insert(
        id.tenant_id.clone(),
        decode_key_hex(&id.tenant_key_hex).expect("validated key"),
    );
    let dlq = match &opts.dlq_dir {
        Some(dir) => DlqStore::open(dir)?,
        None => DlqStore::in_memory(),
    };
    let factory = SecureDataFactory::new(dlq, keystore, id.fpe_key.as_bytes().to_vec()).with_overrides(GateOverrides {
        skip_physics: opts.disable_physics_check,
    });
    let baseline = baseline_histogram(&mut rng, s.baseline_samples, s.baseline_sigma_hz, s.baseline_bins);
    let trust_key = root.public_key();

    let t_control = t0 + 5_000;
    let t_attack = t0 + 10_000;
    let refs = reference_pmus(&mut rng, s.reference_pmus, s.reference_sigma_hz, t_control);
    let batch = |variant: &str, subject: &str, delta_f: f64, at: u64, rng: &mut ChaCha8Rng| {
        let spec = BatchSpec {
            batch_id: format!("phase-a/{variant}"),
            tenant_id: id.tenant_id.clone(),
            source_id: subject.to_string(),
            credential: issue_credential(subject, &id.tenant_id, t0, validity, &root),
            schema_version: cfg.ingest.expected_schema_version,
            delta_f_hz: delta_f,
            sigma_hz: s.baseline_sigma_hz,
            records: s.batch_records,
            record_interval_ms: s.record_interval_ms,
            end_ms: at,
        };
        build_phase_a(gp, &spec, rng)
    };
    let control = batch("control", &id.valid_subject, s.control_delta_f_hz, t_control, &mut rng);
    let poisoned = batch("A2", &id.valid_subject, s.phase_a_delta_f_hz, t_attack, &mut rng);
    let mut revoked_source = poisoned.clone();
    revoked_source.batch_id = "phase-a/A1".into();
    revoked_source.source_id = id.revoked_subject.clone();
    revoked_source.credential = issue_credential(&id.revoked_subject, &id.tenant_id, t0, validity, &root);

    for (variant, b, at, rs) in [
        ("control", &control, t_control, &refs),
        ("A1", &revoked_source, t_attack, &refs),
        ("A2", &poisoned, t_attack, &refs),
    ] {
        let ctx = IngestContext {
            trust_root: &trust_key,
            revocations: &revocations,
            baseline: &baseline,
            grid: gp,
            refs: rs,
            cfg: &cfg.ingest,
        };
        let verdict = factory.submit(b, &ctx, at)?;
        log.extend(tagged(verdict.audit_events, &[("phase", "A"), ("variant", variant)]))?;
    }

    // Phase B: breaker on the inference path, gridsim on the AGC loop.
    let dt = cfg.dt();
    let b_start = t0 + 20_000;
    let b_end = b_start + s.phase_b_duration_ms;
    let samples = build_phase_b(b_start, s.phase_b_duration_ms, s.phase_b_latency_ms, s.phase_b_interval_ms);
    let mut breaker = BreakerState::new(cfg.breaker);
    let mut grid = GridState::at_rest(b_start);
    let mut trace = vec![grid];
    let mut next_sample = 0;
    let mut fallback_engaged_ms = None;
    while grid.t_ms <= b_end {
        let mut inject = 0.0;
        while next_sample < samples.len() && samples[next_sample].ts_ms <= grid.t_ms {
            let sample = samples[next_sample];
            next_sample += 1;
            let (outcome, next) = breaker_record_latency(&breaker, sample.latency_ms, grid.t_ms);
            breaker = next;
            if outcome.action != BreakerAction::Pass && !grid.fallback_engaged {
                grid = engage_fallback(&grid);
                fallback_engaged_ms = Some(grid.t_ms);
                // the disturbance lands as the AI loop drops out
                inject = s.disturbance_mw;
            }
            log.extend(tagged(outcome.audit_events, &[("phase", "B")]))?;
        }
        if grid.t_ms == b_end {
            break;
        }
        grid = grid_step(&grid, inject, gp, dt);
        trace.push(grid);
    }
    let max_abs = trace.iter().map(|g| g.delta_f_hz.abs()).fold(0.0, f64::max);
    let settle = fallback_engaged_ms.and_then(|f| {
        trace
            .iter()
            .find(|g| g.t_ms > f && g.delta_f_hz.abs() < 0.05)
            .map(|g| g.t_ms - f)
    });
    let mut stability = AuditEvent::new(grid.t_ms, EventKind::GridStability, "DROOP_FALLBACK")
        .with("phase", "B")
        .with("max_abs_delta_f_hz", max_abs)
        .with("final_delta_f_hz", grid.delta_f_hz)
        .with("disturbance_mw", s.disturbance_mw)
        .with("dt_ms", dt.get())
        .with("ticks", trace.len() - 1)
        .with("fallback_engaged", grid.fallback_engaged);
    if let Some(f) = fallback_engaged_ms {
        stability = stability.with("fallback_engaged_ms", f);
    }
    if let Some(ms) = settle {
        stability = stability.with("settle_below_0.05hz_ms", ms);
    }
    log.append(stability)?;

    // Phase C: agent tool calls through the sidecar.
    let c_start = b_end + 10_000;
    let phase_c = build_phase_c(
        c_start,
        &s.dispatch_agent,
        s.dispatch_signals,
        s.dispatch_mw,
        s.market_price_usd_mwh,
        s.bid_usd_mwh,
    );
    let mut sidecar = SidecarState::new();
    for (ts, price) in &phase_c.price_feed {
        sidecar.record_price(*ts, *price, cfg.policy.financial_window_ms)?;
    }
    sidecar.available = s.sidecar_available;
    for call in &phase_c.calls {
        let (decision, next) = sidecar_evaluate(call, &sidecar, &cfg.policy, call.timestamp);
        sidecar = next;
        let role = if call.call_id == BID_CALL_ID { "bid" } else { "signal" };
        log.extend(tagged(decision.audit_events, &[("phase", "C"), ("role", role)]))?;
    }
    let c_end = phase_c.calls.last().map_or(c_start, |c| c.timestamp);

    // Canary sub-scenario: a candidate trained on poisoned data.
    let t_canary = c_end + 20_000;
    let (mut n_canary, mut n_base) = (0, 0);
    for k in 0..s.canary_predictions {
        match canary_route(&format!("inference-{k:05}"), cfg.canary.fraction)? {
            Arm::Canary => n_canary += 1,
            Arm::Baseline => n_base += 1,
        }
    }
    let f0 = gp.nominal_freq_f0;
    let canary_preds = canary_predictions(&mut rng, f0, s.canary_sigma_hz, s.canary_shift_hz, true, n_canary);
    let base_preds = canary_predictions(&mut rng, f0, s.canary_sigma_hz, s.canary_shift_hz, false, n_base);
    if !canary_preds.is_empty() && !base_preds.is_empty() {
        let eval = canary_evaluate(&canary_preds, &base_preds, &cfg.canary, t_canary)?;
        log.extend(tagged(eval.audit_events, &[("phase", "canary"), ("candidate_version", &cfg.supply_chain.model_version)]))?;
    }

    let snapshot = log.snapshot();
    log.extend(correlate(&snapshot, s.correlation_window_ms))?;

    let events = log.into_events();
    Ok(ScenarioOutput {
        report: compile_report(&events, seed),
        events,
        grid_trace: trace,
        accepted_batch_ids: factory.accepted_ids(),
    })
}
