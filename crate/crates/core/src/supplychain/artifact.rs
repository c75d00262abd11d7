//! Model artifacts, their digests and detached signatures.

use std::collections::BTreeMap;

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SupplyChainError;
use crate::identity::decode_key_hex;

pub const REQUIRED_MANIFEST_KEYS: [&str; 2] = ["model_name", "version"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub content: Vec<u8>,
    pub manifest: BTreeMap<String, String>,
    pub created_at: u64,
}

impl ModelArtifact {
    pub fn validate(&self) -> Result<(), SupplyChainError> {
        if self.content.is_empty() {
            return Err(SupplyChainError::InvalidArtifact("content is empty".into()));
        }
        for key in REQUIRED_MANIFEST_KEYS {
            if !self.manifest.contains_key(key) {
                return Err(SupplyChainError::InvalidArtifact(format!("manifest lacks `{key}`")));
            }
        }
        for (k, v) in &self.manifest {
            if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
                return Err(SupplyChainError::InvalidArtifact(format!("manifest entry `{k}` is not canonical")));
            }
        }
        Ok(())
    }

    /// Digest input: u64 BE content length and content, then one
    /// `key=value\n` line per manifest entry in key order, then
    /// `created_at` as u64 BE.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.content.len() + 64);
        out.extend_from_slice(&(self.content.len() as u64).to_be_bytes());
        out.extend_from_slice(&self.content);
        for (k, v) in &self.manifest {
            out.extend_from_slice(k.as_bytes());
            out.push(b'=');
            out.extend_from_slice(v.as_bytes());
            out.push(b'\n');
        }
        out.extend_from_slice(&self.created_at.to_be_bytes());
        out
    }

    /// Lower-case hex SHA-256 of [`Self::canonical_bytes`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub signer_id: String,
    pub signed_at: u64,
    pub ci_run_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedArtifact {
    pub artifact: ModelArtifact,
    pub digest: String,
    pub signature: Vec<u8>,
    pub provenance: Provenance,
}

/// Ed25519 key used by the CI signer.
pub struct SignerKey(SigningKey);

impl SignerKey {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self(SigningKey::from_bytes(&seed))
    }

    pub fn from_hex(s: &str) -> Result<Self, SupplyChainError> {
        decode_key_hex(s)
            .map(Self::from_seed)
            .map_err(|e| SupplyChainError::Key(e.to_string()))
    }

    pub fn public_key(&self) -> SignerPublicKey {
        SignerPublicKey(self.0.verifying_key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignerPublicKey(VerifyingKey);

impl SignerPublicKey {
    pub fn from_hex(s: &str) -> Result<Self, SupplyChainError> {
        let bytes = decode_key_hex(s).map_err(|e| SupplyChainError::Key(e.to_string()))?;
        VerifyingKey::from_bytes(&bytes)
            .map(Self)
            .map_err(|_| SupplyChainError::Key("not a valid Ed25519 public key".into()))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0.as_bytes())
    }
}

/// The signed message: the 32 digest bytes followed by the provenance
/// fields, so provenance cannot be swapped under a valid signature.
fn signing_message(digest: &[u8], p: &Provenance) -> Vec<u8> {
    let mut m = Vec::with_capacity(digest.len() + 32 + p.signer_id.len() + p.ci_run_id.len());
    m.extend_from_slice(b"grid-guard/artifact/v1");
    m.extend_from_slice(digest);
    put_str(&mut m, &p.signer_id);
    m.extend_from_slice(&p.signed_at.to_be_bytes());
    put_str(&mut m, &p.ci_run_id);
    m
}

pub fn sign_artifact(
    artifact: ModelArtifact,
    key: &SignerKey,
    signer_id: &str,
    ci_run_id: &str,
    now: u64,
) -> Result<SignedArtifact, SupplyChainError> {
    artifact.validate()?;
    let digest = artifact.digest();
    let provenance = Provenance {
        signer_id: signer_id.to_string(),
        signed_at: now,
        ci_run_id: ci_run_id.to_string(),
    };
    let raw = hex::decode(&digest).expect("digest is hex");
    let signature = key.0.sign(&signing_message(&raw, &provenance)).to_bytes().to_vec();
    Ok(SignedArtifact {
        artifact,
        digest,
        signature,
        provenance,
    })
}

/// True iff the digest recomputes and the signature verifies.
pub fn verify_artifact(sa: &SignedArtifact, key: &SignerPublicKey) -> bool {
    if sa.artifact.validate().is_err() || sa.artifact.digest() != sa.digest {
        return false;
    }
    let Ok(raw) = hex::decode(&sa.digest) else {
        return false;
    };
    let Ok(sig) = Signature::from_slice(&sa.signature) else {
        return false;
    };
    key.0.verify_strict(&signing_message(&raw, &sa.provenance), &sig).is_ok()
}

const MAGIC: &[u8; 8] = b"GGSA\x00\x00\x00\x01";

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_bytes(out, s.as_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_be_bytes());
    out.extend_from_slice(b);
}

impl SignedArtifact {
    /// Canonical record stored by the registry. The encoding is injective
    /// and [`SignedArtifact::from_bytes`] rejects every non-canonical input,
    /// so two records are equal iff their bytes are.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.artifact.content.len() as u64).to_be_bytes());
        out.extend_from_slice(&self.artifact.content);
        out.extend_from_slice(&(self.artifact.manifest.len() as u32).to_be_bytes());
        for (k, v) in &self.artifact.manifest {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&self.artifact.created_at.to_be_bytes());
        put_str(&mut out, &self.digest);
        put_bytes(&mut out, &self.signature);
        put_str(&mut out, &self.provenance.signer_id);
        out.extend_from_slice(&self.provenance.signed_at.to_be_bytes());
        put_str(&mut out, &self.provenance.ci_run_id);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SupplyChainError> {
        let malformed = |what: &str| SupplyChainError::Malformed(what.to_string());
        let mut r = Cursor(bytes);
        if r.take(MAGIC.len()).ok_or_else(|| malformed("magic"))? != MAGIC {
            return Err(malformed("magic"));
        }
        let content_len = r.u64().ok_or_else(|| malformed("content length"))?;
        let content = r
            .take(usize::try_from(content_len).map_err(|_| malformed("content length"))?)
            .ok_or_else(|| malformed("content"))?
            .to_vec();
        let entries = r.u32().ok_or_else(|| malformed("manifest size"))?;
        let mut manifest = BTreeMap::new();
        let mut last: Option<String> = None;
        for _ in 0..entries {
            let k = r.string().ok_or_else(|| malformed("manifest key"))?;
            let v = r.string().ok_or_else(|| malformed("manifest value"))?;
            if last.as_ref().is_some_and(|l| *l >= k) {
                return Err(malformed("manifest order"));
            }
            last = Some(k.clone());
            manifest.insert(k, v);
        }
        let created_at = r.u64().ok_or_else(|| malformed("created_at"))?;
        let digest = r.string().ok_or_else(|| malformed("digest"))?;
        let signature = r.bytes().ok_or_else(|| malformed("signature"))?.to_vec();
        let signer_id = r.string().ok_or_else(|| malformed("signer_id"))?;
        let signed_at = r.u64().ok_or_else(|| malformed("signed_at"))?;
        let ci_run_id = r.string().ok_or_else(|| malformed("ci_run_id"))?;
        if !r.0.is_empty() {
            return Err(malformed("trailing bytes"));
        }
        Ok(SignedArtifact {
            artifact: ModelArtifact {
                content,
                manifest,
                created_at,
            },
            digest,
            signature,
            provenance: Provenance {
                signer_id,
                signed_at,
                ci_run_id,
            },
        })
    }
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.0.len() < n {
            return None;
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Some(head)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_be_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_be_bytes(self.take(8)?.try_into().ok()?))
    }

    fn bytes(&mut self) -> Option<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Option<String> {
        String::from_utf8(self.bytes()?.to_vec()).ok()
    }
}
