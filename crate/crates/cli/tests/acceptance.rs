//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process fails if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use grid_guard::audit::{AuditEvent, EventKind};
use grid_guard::datafactory::{detokenize_field, tokenize_field};
use grid_guard::governance::{
    breaker_record_latency, sidecar_evaluate, BreakerAction, BreakerState, CallKind, Policy, PolicyConfig,
    SidecarState, ToolCall,
};
use grid_guard::scenario::{load_config, run_scenario, RunOptions, ScenarioConfig, ScenarioOutput};
use grid_guard::supplychain::{
    evaluate_robustness, robustness_gate, sign_artifact, LinearModel, ModelArtifact, Registry, RobustnessReport,
    Sample, SignedArtifact, SignerKey, SupplyChainError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const SEED: u64 = 42;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn golden() -> ScenarioConfig {
    load_config(fixture("golden.json")).expect("golden config loads")
}

fn golden_run() -> (ScenarioOutput, Duration) {
    let t = Instant::now();
    let out = run_scenario(&golden(), SEED, &RunOptions::default()).expect("golden run");
    (out, t.elapsed())
}

fn count(events: &[AuditEvent], kind: EventKind) -> usize {
    events.iter().filter(|e| e.event_kind == kind).count()
}

fn criterion_1() -> Check {
    let cfg = golden();
    let h = 800.0 / (0.6 * 2.0 * 60.0);
    ensure!((cfg.grid.inertia_h - h).abs() < 1e-9, "inertia {} != {h}", cfg.grid.inertia_h);
    ensure!(cfg.scenario.phase_a_delta_f_hz == -0.6, "attack deviation {}", cfg.scenario.phase_a_delta_f_hz);
    ensure!(cfg.scenario.control_delta_f_hz == -0.01, "control deviation {}", cfg.scenario.control_delta_f_hz);

    let (out, elapsed) = golden_run();
    let a = &out.report.phase_a;
    let implied = a.implied_delta_p_mw.ok_or("no implied imbalance reported")?;
    ensure!((implied - 800.0).abs() <= 0.8, "implied dP {implied} MW");
    let variant = |v: &str| a.variants.iter().find(|r| r.variant == v).ok_or(format!("variant {v} missing"));
    let a2 = variant("A2")?;
    ensure!(
        a2.outcome == "DeadLettered" && a2.reason.as_deref() == Some("PhysicsViolation"),
        "A2 {a2:?}"
    );
    let control = variant("control")?;
    ensure!(control.outcome == "Accepted", "control {control:?}");
    ensure!(out.accepted_batch_ids == [control.batch_id.clone()], "accepted {:?}", out.accepted_batch_ids);
    ensure!(elapsed < Duration::from_secs(1), "golden run took {elapsed:?}");
    Ok(())
}

fn criterion_2() -> Check {
    let cfg = golden();
    let b0 = BreakerState::new(cfg.breaker.clone());
    let (first, b1) = breaker_record_latency(&b0, 340, 1_000);
    ensure!(first.action == BreakerAction::Break, "340 ms gave {:?}", first.action);
    ensure!(first.action.status_code() == 503, "status {}", first.action.status_code());
    ensure!(
        first.audit_events.iter().any(|e| e.event_kind == EventKind::BreakerBreak && e.get("status_code") == Some("503")),
        "no 503 break event"
    );

    let (second, b2) = breaker_record_latency(&b1, 340, 31_000);
    let (third, b3) = breaker_record_latency(&b2, 340, 61_000);
    let (fourth, _) = breaker_record_latency(&b3, 340, 80_000);
    let actions = [first.action, second.action, third.action, fourth.action];
    ensure!(actions.iter().filter(|a| **a == BreakerAction::Escalate).count() == 1, "actions {actions:?}");
    ensure!(third.action == BreakerAction::Escalate, "third violation gave {:?}", third.action);
    let chain: Vec<EventKind> = third
        .audit_events
        .iter()
        .map(|e| e.event_kind)
        .filter(|k| matches!(k, EventKind::IrPlanInvoked | EventKind::EisacNotified | EventKind::RecoveryDocumented))
        .collect();
    ensure!(
        chain == [EventKind::IrPlanInvoked, EventKind::EisacNotified, EventKind::RecoveryDocumented],
        "chain {chain:?}"
    );

    let (out, elapsed) = golden_run();
    let pb = &out.report.phase_b;
    let first_break = pb.first_break_ms.ok_or("golden run never broke")?;
    ensure!(pb.fallback_engaged_ms == Some(first_break), "fallback {:?} vs break {first_break}", pb.fallback_engaged_ms);
    ensure!(count(&out.events, EventKind::BreakerEscalate) == 1, "escalations in golden log");
    for kind in [EventKind::IrPlanInvoked, EventKind::EisacNotified, EventKind::RecoveryDocumented] {
        ensure!(count(&out.events, kind) == 1, "{} in golden log", kind.as_str());
    }
    let worst = out
        .grid_trace
        .iter()
        .filter(|s| s.t_ms >= first_break)
        .map(|s| s.delta_f_hz.abs())
        .fold(0.0, f64::max);
    ensure!(worst <= 1.0, "|df| reached {worst} Hz after the break");
    ensure!(elapsed < Duration::from_secs(1), "golden run took {elapsed:?}");
    Ok(())
}

fn sidecar_fixture(prior_signals: usize) -> (SidecarState, PolicyConfig, u64) {
    let cfg = PolicyConfig::default();
    let now = 10_000_000;
    let mut state = SidecarState::new();
    for (k, p) in [40.0, 44.0, 41.0, 43.0, 42.0, 42.0].into_iter().enumerate() {
        let ts = now - (5 - k as u64) * 600_000;
        state.record_price(ts, p, cfg.financial_window_ms).expect("ordered feed");
    }
    for i in 0..prior_signals {
        let call = ToolCall {
            call_id: format!("sig-{i}"),
            agent_id: "agent".into(),
            kind: CallKind::DispatchSignal,
            magnitude: 50.0,
            timestamp: now - 50_000 + i as u64 * 10_000,
        };
        let (d, next) = sidecar_evaluate(&call, &state, &cfg, call.timestamp);
        assert!(d.is_allow(), "setup signal {i} denied");
        state = next;
    }
    (state, cfg, now)
}

fn bid(magnitude: f64, now: u64) -> ToolCall {
    ToolCall {
        call_id: "bid".into(),
        agent_id: "agent".into(),
        kind: CallKind::MarketBid,
        magnitude,
        timestamp: now,
    }
}

fn criterion_3() -> Check {
    let (state, cfg, now) = sidecar_fixture(4);
    let (d, _) = sidecar_evaluate(&bid(9000.0, now), &state, &cfg, now);
    let ceiling = d.ceiling.ok_or("no ceiling")?;
    ensure!((ceiling - 48.30).abs() <= 0.01, "ceiling {ceiling}");
    ensure!(!d.is_allow(), "bid allowed");
    ensure!(d.denied_by(Policy::Financial) && d.denied_by(Policy::Velocity), "reasons {:?}", d.reasons);
    ensure!(d.violation_factor == Some(186), "factor {:?}", d.violation_factor);
    ensure!((9000.0 / ceiling).floor() == 186.0, "oracle factor");

    // Without the velocity violation.
    let (state, cfg, now) = sidecar_fixture(2);
    let (d, _) = sidecar_evaluate(&bid(9000.0, now), &state, &cfg, now);
    ensure!(
        !d.is_allow() && d.denied_by(Policy::Financial) && !d.denied_by(Policy::Velocity),
        "financial only: {:?}",
        d.reasons
    );
    // Without the financial violation.
    let (state, cfg, now) = sidecar_fixture(4);
    let (d, _) = sidecar_evaluate(&bid(45.0, now), &state, &cfg, now);
    ensure!(
        !d.is_allow() && d.denied_by(Policy::Velocity) && !d.denied_by(Policy::Financial),
        "velocity only: {:?}",
        d.reasons
    );

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut down = SidecarState::new();
    down.available = false;
    for i in 0..1_000u64 {
        let call = ToolCall {
            call_id: format!("c{i}"),
            agent_id: format!("agent-{}", rng.random_range(0..4)),
            kind: if rng.random_bool(0.5) { CallKind::MarketBid } else { CallKind::DispatchSignal },
            magnitude: rng.random_range(0.0..100.0),
            timestamp: i * 1_000,
        };
        let (d, next) = sidecar_evaluate(&call, &down, &cfg, call.timestamp);
        ensure!(!d.is_allow() && d.denied_by(Policy::FailSafe), "call {i} not denied while unavailable");
        down = next;
    }
    Ok(())
}

fn criterion_4() -> Check {
    let (out, _) = golden_run();
    let sigs: Vec<&AuditEvent> =
        out.events.iter().filter(|e| e.event_kind == EventKind::MultiVectorSignature).collect();
    ensure!(sigs.len() == 1, "{} signatures", sigs.len());
    let ids: Vec<usize> = sigs[0]
        .get("linked_event_ids")
        .ok_or("no linked ids")?
        .split(',')
        .map(|s| s.parse().map_err(|_| format!("bad id {s}")))
        .collect::<Result<_, _>>()?;
    let kinds: BTreeSet<&str> = ids
        .iter()
        .map(|i| out.events.get(*i).map(|e| e.event_kind.as_str()).ok_or(format!("id {i} out of range")))
        .collect::<Result<_, _>>()?;
    ensure!(kinds.contains("DLQ_ROUTE") && kinds.contains("BREAKER_BREAK"), "linked kinds {kinds:?}");
    Ok(())
}

fn registry_mutations() -> Check {
    let key = SignerKey::from_seed([7; 32]);
    let manifest = BTreeMap::from([("model_name".to_string(), "m".to_string()), ("version".to_string(), "1".to_string())]);
    let artifact = ModelArtifact {
        content: b"w=1.5,-1.0;b=0.25".to_vec(),
        manifest,
        created_at: 5,
    };
    let sa = sign_artifact(artifact, &key, "ci", "run-1", 5).map_err(|e| e.to_string())?;
    let reg = Registry::in_memory(key.public_key());
    reg.put(&sa, 10).map_err(|e| e.to_string())?;
    let original = sa.to_bytes();
    let mut conflicting = 0usize;
    for pos in 0..original.len() {
        for delta in 1..=255u8 {
            let mut bytes = original.clone();
            bytes[pos] ^= delta;
            let Ok(mutated) = SignedArtifact::from_bytes(&bytes) else {
                continue;
            };
            match reg.put(&mutated, 20) {
                Err(SupplyChainError::ImmutableViolation(_)) => conflicting += 1,
                Err(_) => {}
                Ok(_) => return Err(format!("mutation {delta:#04x} at byte {pos} was accepted")),
            }
        }
    }
    ensure!(conflicting > 0, "no mutation exercised the conflicting re-put path");
    ensure!(reg.len() == 1, "registry holds {} objects", reg.len());
    ensure!(reg.get_bytes(&sa.digest).map_err(|e| e.to_string())? == original, "stored bytes changed");
    Ok(())
}

fn gate_grid() -> Check {
    let report = |clean: u32, robust: u32| RobustnessReport {
        clean_accuracy: f64::from(clean) / 100.0,
        robust_accuracy: f64::from(robust) / 100.0,
        epsilon: 0.1,
    };
    for cc in 0..=100 {
        for cr in 0..=100 {
            let cand = report(cc, cr);
            for bc in 0..=100 {
                for br in 0..=100 {
                    let expect_fail = cc > bc && cr < br;
                    let outcome = robustness_gate(&cand, &report(bc, br), 0.0).map_err(|e| e.to_string())?;
                    ensure!(
                        outcome.is_pass() != expect_fail,
                        "candidate ({cc},{cr}) baseline ({bc},{br}) gave {outcome:?}"
                    );
                }
            }
        }
    }
    Ok(())
}

fn criterion_5() -> Check {
    registry_mutations()?;
    gate_grid()
}

/// Exhaustive oracle: a linear classifier is robust at `x` iff every corner
/// of the L-inf box around `x` is still classified correctly.
fn robust_by_corners(model: &LinearModel, s: &Sample, eps: f64) -> bool {
    let d = s.x.len();
    (0..1u32 << d).all(|mask| {
        let score = s
            .x
            .iter()
            .zip(&model.weights)
            .enumerate()
            .map(|(i, (x, w))| w * (x + if mask >> i & 1 == 1 { eps } else { -eps }))
            .sum::<f64>()
            + model.bias;
        f64::from(s.label) * score > 0.0
    })
}

fn criterion_6() -> Check {
    let text = std::fs::read_to_string(fixture("toy_dataset.json")).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let model: LinearModel = serde_json::from_value(v["model"].clone()).map_err(|e| e.to_string())?;
    let samples: Vec<Sample> = serde_json::from_value(v["samples"].clone()).map_err(|e| e.to_string())?;
    ensure!(samples.len() == 20, "{} samples", samples.len());

    let mut prev = f64::INFINITY;
    for step in 0..=10 {
        let eps = f64::from(step) / 10.0;
        let r = evaluate_robustness(&model, &samples, eps).map_err(|e| e.to_string())?;
        ensure!(r.robust_accuracy <= prev, "robust accuracy rose at eps {eps}");
        prev = r.robust_accuracy;
        if step == 0 {
            ensure!(r.robust_accuracy == r.clean_accuracy, "eps 0: {r:?}");
        }
        let oracle = samples.iter().filter(|s| robust_by_corners(&model, s, eps)).count() as f64 / 20.0;
        ensure!(r.robust_accuracy == oracle, "eps {eps}: {} vs oracle {oracle}", r.robust_accuracy);
    }
    Ok(())
}

fn run_binary(out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_grid-guard"))
        .args(["run", "--config"])
        .arg(fixture("golden.json"))
        .args(["--seed", &SEED.to_string(), "--out"])
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(status.status.code() == Some(0), "run exited with {:?}", status.status.code());
    Ok(())
}

fn criterion_7() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_binary(a.path())?;
    run_binary(b.path())?;
    for file in ["report.json", "audit.jsonl"] {
        let x = std::fs::read(a.path().join(file)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.path().join(file)).map_err(|e| e.to_string())?;
        ensure!(!x.is_empty() && x == y, "{file} differs between runs");
    }
    Ok(())
}

/// Matrix rows transcribed as (row, ATLAS ids, OWASP LLM ids).
const MATRIX: [(u8, &[&str], &[&str]); 7] = [
    (1, &["AML.T0020"], &["LLM04:2025"]),
    (2, &["AML.T0020"], &["LLM08:2025", "LLM02:2025"]),
    (3, &["AML.T0010"], &["LLM03:2025"]),
    (4, &["AML.T0029"], &["LLM10:2025"]),
    (5, &["AML.T0051"], &["LLM06:2025", "LLM01:2025"]),
    (6, &["AML.T0029"], &["LLM05:2025"]),
    (7, &["AML.T0020", "AML.T0040"], &["LLM09:2025", "LLM05:2025"]),
];

fn expected_row(kind: &str) -> Option<u8> {
    Some(match kind {
        "INGEST_OK" | "DLQ_ROUTE" => 1,
        "REGISTRY_PUT" | "GATE_FAIL" => 3,
        "BREAKER_BREAK" | "BREAKER_ESCALATE" | "IR_PLAN_INVOKED" | "EISAC_NOTIFIED" | "RECOVERY_DOCUMENTED"
        | "MULTI_VECTOR_SIGNATURE" | "GRID_STABILITY" => 4,
        "SIDECAR_ALLOW" | "SIDECAR_DENY" => 5,
        "CANARY_ROLLBACK" => 7,
        _ => return None,
    })
}

fn criterion_8() -> Check {
    let (out, _) = golden_run();
    let cand: RobustnessReport =
        serde_json::from_str(&std::fs::read_to_string(fixture("gate_candidate.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let base: RobustnessReport =
        serde_json::from_str(&std::fs::read_to_string(fixture("gate_baseline.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let gate_event = robustness_gate(&cand, &base, 0.0)
        .map_err(|e| e.to_string())?
        .audit_event(&cand, 0)
        .ok_or("gate fixture passed")?;

    let mut rows = BTreeSet::new();
    for e in out.events.iter().chain(std::iter::once(&gate_event)) {
        let kind = e.event_kind.as_str();
        let row = expected_row(kind).ok_or(format!("unmapped kind {kind}"))?;
        let (_, atlas, owasp) = MATRIX[usize::from(row) - 1];
        let tags: BTreeSet<&str> = e.framework_tags.iter().map(String::as_str).collect();
        for t in atlas.iter().chain(owasp) {
            ensure!(tags.contains(t), "{kind} lacks {t}");
        }
        let llm: BTreeSet<&str> = tags.iter().copied().filter(|t| t.starts_with("LLM")).collect();
        ensure!(llm == owasp.iter().copied().collect(), "{kind} carries {llm:?}");
        ensure!(e.tags_match_map(), "{kind} tags disagree with the compliance map");
        rows.insert(row);
    }
    ensure!(rows == BTreeSet::from([1, 3, 4, 5, 7]), "rows exercised {rows:?}");
    ensure!(out.report.compliance_rows_static_only == [2, 6], "static-only {:?}", out.report.compliance_rows_static_only);
    Ok(())
}

fn criterion_9() -> Check {
    let key = b"acceptance-fpe-key";
    for len in 1..=4u32 {
        let n = 10usize.pow(len);
        let mut seen = vec![false; n];
        for i in 0..n {
            let pt = format!("{i:0width$}", width = len as usize);
            let ct = tokenize_field(&pt, key).map_err(|e| e.to_string())?;
            ensure!(ct.len() == pt.len() && ct.bytes().all(|b| b.is_ascii_digit()), "{pt} -> {ct}");
            let idx: usize = ct.parse().map_err(|_| format!("token {ct}"))?;
            ensure!(!seen[idx], "collision at length {len} on {ct}");
            seen[idx] = true;
            ensure!(detokenize_field(&ct, key).map_err(|e| e.to_string())? == pt, "{pt} does not round-trip");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10_000 {
        let len = rng.random_range(5..=64);
        let pt: String = (0..len).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect();
        let ct = tokenize_field(&pt, key).map_err(|e| e.to_string())?;
        ensure!(ct.len() == len, "length changed for {pt}");
        ensure!(detokenize_field(&ct, key).map_err(|e| e.to_string())? == pt, "{pt} does not round-trip");
    }
    Ok(())
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("phase A swing-equation check", criterion_1),
        ("phase B latency breaker and droop fallback", criterion_2),
        ("phase C governance sidecar", criterion_3),
        ("multi-vector correlation", criterion_4),
        ("write-once registry and robustness gate", criterion_5),
        ("FGSM evaluator", criterion_6),
        ("deterministic CLI runs", criterion_7),
        ("compliance coverage", criterion_8),
        ("format-preserving tokenization", criterion_9),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = panic::catch_unwind(check).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let ms = t.elapsed().as_millis();
        match result {
            Ok(()) => println!("criterion {}: PASS  {name} ({ms} ms)", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({ms} ms): {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
