//! Write-once, content-addressed artifact registry.
//!
//! A digest can be bound exactly once. Re-putting byte-identical records is
//! a successful no-op so CI retries are safe; anything else under an
//! existing digest is refused before the signature is even looked at.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::{verify_artifact, SignedArtifact, SignerPublicKey, SupplyChainError};
use crate::audit::{AuditEvent, EventKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub digest: String,
    pub stored_at: u64,
    /// False when the put matched an existing identical record.
    pub newly_stored: bool,
}

impl Receipt {
    pub fn audit_event(&self, sa: &SignedArtifact, now: u64) -> AuditEvent {
        AuditEvent::new(now, EventKind::RegistryPut, "IMMUTABLE_REGISTRY")
            .with("digest", &self.digest)
            .with("stored_at", self.stored_at)
            .with("newly_stored", self.newly_stored)
            .with("signer_id", &sa.provenance.signer_id)
            .with("ci_run_id", &sa.provenance.ci_run_id)
    }
}

/// One line of `provenance.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub digest: String,
    pub signer_id: String,
    pub signed_at: u64,
    pub ci_run_id: String,
}

#[derive(Debug, Clone)]
struct Stored {
    bytes: Vec<u8>,
    stored_at: u64,
}

/// Registry bound to the public key of the trusted CI signer.
///
/// On disk: `objects/<digest>.ggsa` holds the canonical record and
/// `provenance.jsonl` an append-only log of every first put.
#[derive(Debug)]
pub struct Registry {
    root: Option<PathBuf>,
    signer: SignerPublicKey,
    objects: RwLock<BTreeMap<String, Stored>>,
}

impl Registry {
    pub fn in_memory(signer: SignerPublicKey) -> Self {
        Self {
            root: None,
            signer,
            objects: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn open(root: impl AsRef<Path>, signer: SignerPublicKey) -> Result<Self, SupplyChainError> {
        let root = root.as_ref().to_path_buf();
        let objects_dir = root.join("objects");
        fs::create_dir_all(&objects_dir)?;
        let mut objects = BTreeMap::new();
        for entry in fs::read_dir(&objects_dir)? {
            let path = entry?.path();
            let Some(digest) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".ggsa"))
            else {
                continue;
            };
            let bytes = fs::read(&path)?;
            let stored_at = fs::metadata(&path)?
                .modified()
                .ok()
                .and_then(|t| t.duration_since(std::time::UNIX_EPOCH).ok())
                .map_or(0, |d| d.as_millis() as u64);
            objects.insert(digest.to_string(), Stored { bytes, stored_at });
        }
        Ok(Self {
            root: Some(root),
            signer,
            objects: RwLock::new(objects),
        })
    }

    pub fn put(&self, sa: &SignedArtifact, now: u64) -> Result<Receipt, SupplyChainError> {
        let bytes = sa.to_bytes();
        let mut objects = self.objects.write().expect("registry poisoned");
        if let Some(existing) = objects.get(&sa.digest) {
            return if existing.bytes == bytes {
                Ok(Receipt {
                    digest: sa.digest.clone(),
                    stored_at: existing.stored_at,
                    newly_stored: false,
                })
            } else {
                Err(SupplyChainError::ImmutableViolation(sa.digest.clone()))
            };
        }
        if !verify_artifact(sa, &self.signer) {
            return Err(SupplyChainError::UnverifiableArtifact);
        }
        if let Some(root) = &self.root {
            persist(root, sa, &bytes)?;
        }
        objects.insert(
            sa.digest.clone(),
            Stored {
                bytes,
                stored_at: now,
            },
        );
        Ok(Receipt {
            digest: sa.digest.clone(),
            stored_at: now,
            newly_stored: true,
        })
    }

    pub fn get(&self, digest: &str) -> Result<SignedArtifact, SupplyChainError> {
        SignedArtifact::from_bytes(&self.get_bytes(digest)?)
    }

    pub fn get_bytes(&self, digest: &str) -> Result<Vec<u8>, SupplyChainError> {
        self.objects
            .read()
            .expect("registry poisoned")
            .get(digest)
            .map(|s| s.bytes.clone())
            .ok_or_else(|| SupplyChainError::NotFound(digest.to_string()))
    }

    pub fn len(&self) -> usize {
        self.objects.read().expect("registry poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn persist(root: &Path, sa: &SignedArtifact, bytes: &[u8]) -> Result<(), SupplyChainError> {
    // only hex digests may name files
    if sa.digest.len() != 64 || !sa.digest.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(SupplyChainError::UnverifiableArtifact);
    }
    let path = root.join("objects").join(format!("{}.ggsa", sa.digest));
    match OpenOptions::new().write(true).create_new(true).open(&path) {
        Ok(mut f) => f.write_all(bytes)?,
        Err(e) if e.kind() == ErrorKind::AlreadyExists => {
            // another process won the race
            return if fs::read(&path)? == bytes {
                Ok(())
            } else {
                Err(SupplyChainError::ImmutableViolation(sa.digest.clone()))
            };
        }
        Err(e) => return Err(e.into()),
    }
    let entry = ProvenanceEntry {
        digest: sa.digest.clone(),
        signer_id: sa.provenance.signer_id.clone(),
        signed_at: sa.provenance.signed_at,
        ci_run_id: sa.provenance.ci_run_id.clone(),
    };
    let mut line = serde_json::to_vec(&entry).map_err(std::io::Error::from)?;
    line.push(b'\n');
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(root.join("provenance.jsonl"))?
        .write_all(&line)?;
    Ok(())
}
