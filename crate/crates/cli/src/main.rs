use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grid_guard::audit::{read_jsonl, write_jsonl};
use grid_guard::gridsim::write_trace_csv;
use grid_guard::scenario::{compile_report, load_config, report_json, run_scenario, RunOptions};
use grid_guard::supplychain::{
    robustness_gate, sign_artifact, verify_artifact, ModelArtifact, Registry, RobustnessReport, SignedArtifact,
    SignerKey, SignerPublicKey, SupplyChainError,
};

const EXIT_OK: u8 = 0;
const EXIT_REJECTED: u8 = 1;
const EXIT_NOT_CONTAINED: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_GATE_FAIL: u8 = 4;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "grid-guard", version, about = "Layered AI-security scenario engine for grid control systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the three-phase scenario and write report.json, audit.jsonl,
    /// grid_trace.csv and dlq/ into the output directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sign a model file into a canonical signed-artifact record.
    SignArtifact {
        #[arg(long)]
        content: PathBuf,
        /// Manifest entry as key=value; must include model_name and version.
        #[arg(long = "manifest", value_name = "KEY=VALUE")]
        manifest: Vec<String>,
        #[arg(long)]
        signer_seed_hex: String,
        #[arg(long)]
        signer_id: String,
        #[arg(long)]
        ci_run_id: String,
        /// Creation and signing time in epoch ms.
        #[arg(long)]
        at_ms: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a signed-artifact record against a signer public key.
    VerifyArtifact {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        public_key_hex: String,
    },
    /// Store a signed artifact in a write-once registry directory.
    RegistryPut {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        public_key_hex: String,
        #[arg(long)]
        at_ms: u64,
    },
    /// Fetch a stored artifact by digest.
    RegistryGet {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        digest: String,
        #[arg(long)]
        public_key_hex: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the robustness gate to two evaluation reports.
    Gate {
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        min_robust: f64,
    },
    /// Rebuild a report from a saved audit log.
    ReplayReport {
        #[arg(long)]
        audit: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure with its exit code already decided.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn rejected(message: impl ToString) -> Self {
        Self {
            code: EXIT_REJECTED,
            message: message.to_string(),
        }
    }
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::rejected(format!("{}: {e}", path.display()))
}

fn read_report(path: &Path) -> Result<RobustnessReport, Failure> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    serde_json::from_str(&text).map_err(|e| Failure::rejected(format!("{}: {e}", path.display())))
}

fn read_signed(path: &Path) -> Result<SignedArtifact, Failure> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    SignedArtifact::from_bytes(&bytes).map_err(|e| Failure::rejected(format!("{}: {e}", path.display())))
}

fn public_key(hex_key: &str) -> Result<SignerPublicKey, Failure> {
    SignerPublicKey::from_hex(hex_key).map_err(Failure::rejected)
}

fn supply(e: SupplyChainError) -> Failure {
    Failure::rejected(e)
}

fn run(config: &Path, seed: u64, out: &Path) -> Result<u8, Failure> {
    let cfg = load_config(config).map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: e.to_string(),
    })?;
    fs::create_dir_all(out).map_err(io_at(out))?;
    let dlq_dir = out.join("dlq");
    for stale in ["batches.bin", "index.jsonl"] {
        let p = dlq_dir.join(stale);
        if p.exists() {
            fs::remove_file(&p).map_err(io_at(&p))?;
        }
    }
    let opts = RunOptions {
        dlq_dir: Some(dlq_dir),
        ..RunOptions::default()
    };
    let output = run_scenario(&cfg, seed, &opts).map_err(Failure::rejected)?;

    let report_path = out.join("report.json");
    fs::write(&report_path, report_json(&output.report)).map_err(io_at(&report_path))?;
    let audit_path = out.join("audit.jsonl");
    let audit = File::create(&audit_path).map_err(io_at(&audit_path))?;
    write_jsonl(BufWriter::new(audit), &output.events).map_err(Failure::rejected)?;
    let trace_path = out.join("grid_trace.csv");
    let trace = File::create(&trace_path).map_err(io_at(&trace_path))?;
    write_trace_csv(BufWriter::new(trace), &output.grid_trace).map_err(io_at(&trace_path))?;

    let r = &output.report;
    println!(
        "phase A contained: {}\nphase B contained: {}\nphase C contained: {}\nmulti-vector signature: {}",
        r.phase_a.contained, r.phase_b.contained, r.phase_c.contained, r.correlation.signature_emitted
    );
    Ok(if r.all_contained { EXIT_OK } else { EXIT_NOT_CONTAINED })
}

#[allow(clippy::too_many_arguments)]
fn sign(
    content: &Path,
    manifest: &[String],
    seed_hex: &str,
    signer_id: &str,
    ci_run_id: &str,
    at_ms: u64,
    out: &Path,
) -> Result<u8, Failure> {
    let mut entries = BTreeMap::new();
    for m in manifest {
        let (k, v) = m
            .split_once('=')
            .ok_or_else(|| Failure::rejected(format!("manifest entry `{m}` is not KEY=VALUE")))?;
        entries.insert(k.to_string(), v.to_string());
    }
    let key = SignerKey::from_hex(seed_hex).map_err(supply)?;
    let artifact = ModelArtifact {
        content: fs::read(content).map_err(io_at(content))?,
        manifest: entries,
        created_at: at_ms,
    };
    let signed = sign_artifact(artifact, &key, signer_id, ci_run_id, at_ms).map_err(supply)?;
    fs::write(out, signed.to_bytes()).map_err(io_at(out))?;
    println!(
        "{}",
        serde_json::json!({ "digest": signed.digest, "public_key_hex": key.public_key().to_hex() })
    );
    Ok(EXIT_OK)
}

fn dispatch(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Run { config, seed, out } => run(&config, seed, &out),
        Command::SignArtifact {
            content,
            manifest,
            signer_seed_hex,
            signer_id,
            ci_run_id,
            at_ms,
            out,
        } => sign(&content, &manifest, &signer_seed_hex, &signer_id, &ci_run_id, at_ms, &out),
        Command::VerifyArtifact {
            artifact,
            public_key_hex,
        } => {
            let sa = read_signed(&artifact)?;
            if verify_artifact(&sa, &public_key(&public_key_hex)?) {
                println!("verified {}", sa.digest);
                Ok(EXIT_OK)
            } else {
                Err(Failure::rejected(format!("{}: signature or digest does not verify", artifact.display())))
            }
        }
        Command::RegistryPut {
            registry,
            artifact,
            public_key_hex,
            at_ms,
        } => {
            let reg = Registry::open(&registry, public_key(&public_key_hex)?).map_err(supply)?;
            let receipt = reg.put(&read_signed(&artifact)?, at_ms).map_err(supply)?;
            println!("{}", serde_json::to_string(&receipt).expect("receipt serializes"));
            Ok(EXIT_OK)
        }
        Command::RegistryGet {
            registry,
            digest,
            public_key_hex,
            out,
        } => {
            let reg = Registry::open(&registry, public_key(&public_key_hex)?).map_err(supply)?;
            let bytes = reg.get_bytes(&digest).map_err(supply)?;
            fs::write(&out, bytes).map_err(io_at(&out))?;
            Ok(EXIT_OK)
        }
        Command::Gate {
            candidate,
            baseline,
            min_robust,
        } => {
            let c = read_report(&candidate)?;
            let b = read_report(&baseline)?;
            let outcome = robustness_gate(&c, &b, min_robust).map_err(supply)?;
            match outcome {
                grid_guard::supplychain::GateOutcome::Pass => {
                    println!("PASS");
                    Ok(EXIT_OK)
                }
                grid_guard::supplychain::GateOutcome::Fail(f) => {
                    println!("FAIL: {}", f.reasons().join(", "));
                    Ok(EXIT_GATE_FAIL)
                }
            }
        }
        Command::ReplayReport { audit, seed, out } => {
            let file = File::open(&audit).map_err(io_at(&audit))?;
            let events = read_jsonl(BufReader::new(file)).map_err(Failure::rejected)?;
            let json = report_json(&compile_report(&events, seed));
            match out {
                Some(p) => fs::write(&p, json).map_err(io_at(&p))?,
                None => print!("{json}"),
            }
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("grid-guard: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
