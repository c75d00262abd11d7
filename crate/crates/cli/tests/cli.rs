use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn grid_guard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grid-guard")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SEED_HEX: &str = "0707070707070707070707070707070707070707070707070707070707070707";

#[test]
fn usage_errors_exit_64() {
    let out = grid_guard(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(grid_guard(&["run", "--seed", "1"]).status.code(), Some(64));
    assert_eq!(grid_guard(&["--help"]).status.code(), Some(0));
    assert_eq!(grid_guard(&["--version"]).status.code(), Some(0));
}

#[test]
fn config_errors_exit_3_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("golden.json")).unwrap()).unwrap();
    cfg["grid"]["rated_capacity_mw"] = (-5.0).into();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, cfg.to_string()).unwrap();
    let out = grid_guard(&["run", "--config", path(&bad), "--seed", "1", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("grid.rated_capacity_mw") && err.contains("bad.json"), "{err}");

    let missing = dir.path().join("missing.json");
    let out = grid_guard(&["run", "--config", path(&missing), "--seed", "1", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn run_writes_artifacts_and_replay_matches() {
    let dir = tempfile::tempdir().unwrap();
    let out = grid_guard(&["run", "--config", path(&fixture("golden.json")), "--seed", "5", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["report.json", "audit.jsonl", "grid_trace.csv", "dlq/index.jsonl", "dlq/batches.bin"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let trace = std::fs::read_to_string(dir.path().join("grid_trace.csv")).unwrap();
    assert!(trace.starts_with("t_ms,delta_f_hz,imbalance_mw,fallback\n"));

    let audit = dir.path().join("audit.jsonl");
    let replay = grid_guard(&["replay-report", "--audit", path(&audit), "--seed", "5"]);
    assert_eq!(replay.status.code(), Some(0));
    assert_eq!(replay.stdout, std::fs::read(dir.path().join("report.json")).unwrap());

    // A second run into the same directory does not accumulate dead letters.
    let index_len = std::fs::read_to_string(dir.path().join("dlq/index.jsonl")).unwrap().lines().count();
    grid_guard(&["run", "--config", path(&fixture("golden.json")), "--seed", "5", "--out", path(dir.path())]);
    let again = std::fs::read_to_string(dir.path().join("dlq/index.jsonl")).unwrap().lines().count();
    assert_eq!(index_len, again);
}

#[test]
fn gate_exit_codes() {
    let cand = fixture("gate_candidate.json");
    let base = fixture("gate_baseline.json");
    let out = grid_guard(&["gate", "--candidate", path(&cand), "--baseline", path(&base)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stdout).contains("accuracy-robustness tradeoff"));
    let out = grid_guard(&["gate", "--candidate", path(&base), "--baseline", path(&base)]);
    assert_eq!(out.status.code(), Some(0));
    let out = grid_guard(&["gate", "--candidate", path(&base), "--baseline", path(&base), "--min-robust", "0.9"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn sign_verify_and_registry_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let content = dir.path().join("model.bin");
    std::fs::write(&content, b"weights").unwrap();
    let ggsa = dir.path().join("model.ggsa");
    let out = grid_guard(&[
        "sign-artifact",
        "--content",
        path(&content),
        "--manifest",
        "model_name=agc",
        "--manifest",
        "version=3",
        "--signer-seed-hex",
        SEED_HEX,
        "--signer-id",
        "ci",
        "--ci-run-id",
        "run-9",
        "--at-ms",
        "100",
        "--out",
        path(&ggsa),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let info: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let pk = info["public_key_hex"].as_str().unwrap().to_string();
    let digest = info["digest"].as_str().unwrap().to_string();

    assert_eq!(grid_guard(&["verify-artifact", "--artifact", path(&ggsa), "--public-key-hex", &pk]).status.code(), Some(0));
    let other_pk = "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a";
    assert_eq!(
        grid_guard(&["verify-artifact", "--artifact", path(&ggsa), "--public-key-hex", other_pk]).status.code(),
        Some(1)
    );

    let reg = dir.path().join("registry");
    let put = |artifact: &Path| {
        grid_guard(&["registry-put", "--registry", path(&reg), "--artifact", path(artifact), "--public-key-hex", &pk, "--at-ms", "200"])
    };
    assert_eq!(put(&ggsa).status.code(), Some(0));
    assert_eq!(put(&ggsa).status.code(), Some(0), "identical re-put is idempotent");

    let fetched = dir.path().join("fetched.ggsa");
    let get = grid_guard(&["registry-get", "--registry", path(&reg), "--digest", &digest, "--public-key-hex", &pk, "--out", path(&fetched)]);
    assert_eq!(get.status.code(), Some(0));
    assert_eq!(std::fs::read(&fetched).unwrap(), std::fs::read(&ggsa).unwrap());

    // Same digest, different provenance: a conflicting re-put.
    let resigned = dir.path().join("resigned.ggsa");
    grid_guard(&[
        "sign-artifact",
        "--content",
        path(&content),
        "--manifest",
        "model_name=agc",
        "--manifest",
        "version=3",
        "--signer-seed-hex",
        SEED_HEX,
        "--signer-id",
        "ci",
        "--ci-run-id",
        "run-10",
        "--at-ms",
        "100",
        "--out",
        path(&resigned),
    ]);
    let out = put(&resigned);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&digest));

    let missing = grid_guard(&["registry-get", "--registry", path(&reg), "--digest", &"0".repeat(64), "--public-key-hex", &pk, "--out", path(&fetched)]);
    assert_eq!(missing.status.code(), Some(1));
}
