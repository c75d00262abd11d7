//! Short-lived workload credentials for field devices.
//!
//! A credential binds a subject to a tenant for a half-open validity
//! interval `[issued_at, expires_at)`. The trust root signs a canonical,
//! length-prefixed serialization with Ed25519, which is deterministic, so
//! identical inputs always produce byte-identical credentials.

use std::collections::BTreeSet;
use std::num::NonZeroU64;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdentityError {
    #[error("trust-root key must be 32 bytes of hex, got {0} bytes")]
    KeyLength(usize),
    #[error("invalid hex in trust-root key: {0}")]
    KeyHex(String),
    #[error("invalid trust-root public key")]
    PublicKey,
}

/// Signing half of the trust root. Confined to the issuing context.
pub struct TrustRoot {
    key: SigningKey,
}

impl TrustRoot {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self {
            key: SigningKey::from_bytes(&seed),
        }
    }

    pub fn from_hex(hex_seed: &str) -> Result<Self, IdentityError> {
        Ok(Self::from_seed(decode_key_hex(hex_seed)?))
    }

    pub fn public_key(&self) -> TrustRootKey {
        TrustRootKey(self.key.verifying_key())
    }
}

impl std::fmt::Debug for TrustRoot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrustRoot").field("public", &self.public_key()).finish_non_exhaustive()
    }
}

/// Verifying half of the trust root.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrustRootKey(VerifyingKey);

impl TrustRootKey {
    pub fn from_hex(hex_key: &str) -> Result<Self, IdentityError> {
        let bytes = decode_key_hex(hex_key)?;
        VerifyingKey::from_bytes(&bytes).map(Self).map_err(|_| IdentityError::PublicKey)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0.as_bytes())
    }

    pub(crate) fn inner(&self) -> &VerifyingKey {
        &self.0
    }
}

pub(crate) fn decode_key_hex(s: &str) -> Result<[u8; 32], IdentityError> {
    let bytes = hex::decode(s.trim()).map_err(|e| IdentityError::KeyHex(e.to_string()))?;
    let len = bytes.len();
    bytes.try_into().map_err(|_| IdentityError::KeyLength(len))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct WorkloadCredential {
    pub subject_id: String,
    pub tenant_id: String,
    pub issued_at: u64,
    pub expires_at: u64,
    pub signature: Vec<u8>,
}

impl WorkloadCredential {
    /// Canonical payload: length-prefixed subject and tenant (u32 BE), then
    /// `issued_at` and `expires_at` as u64 BE.
    pub fn canonical_payload(&self) -> Vec<u8> {
        canonical_payload(&self.subject_id, &self.tenant_id, self.issued_at, self.expires_at)
    }

    /// Payload followed by a u32 BE length-prefixed signature.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.canonical_payload();
        put_bytes(&mut out, &self.signature);
        out
    }

    /// Parses the canonical binary form. Returns `None` on any structural
    /// defect, including trailing bytes.
    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let mut r = Reader(bytes);
        let subject_id = String::from_utf8(r.bytes()?.to_vec()).ok()?;
        let tenant_id = String::from_utf8(r.bytes()?.to_vec()).ok()?;
        let issued_at = r.u64()?;
        let expires_at = r.u64()?;
        let signature = r.bytes()?.to_vec();
        r.0.is_empty().then_some(Self {
            subject_id,
            tenant_id,
            issued_at,
            expires_at,
            signature,
        })
    }

    pub fn to_base64(&self) -> String {
        BASE64.encode(self.to_bytes())
    }
}

impl From<WorkloadCredential> for String {
    fn from(c: WorkloadCredential) -> Self {
        c.to_base64()
    }
}

impl TryFrom<String> for WorkloadCredential {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        let bytes = BASE64.decode(s).map_err(|e| e.to_string())?;
        Self::from_bytes(&bytes).ok_or_else(|| "malformed credential".to_string())
    }
}

fn canonical_payload(subject: &str, tenant: &str, issued_at: u64, expires_at: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + subject.len() + tenant.len());
    put_bytes(&mut out, subject.as_bytes());
    put_bytes(&mut out, tenant.as_bytes());
    out.extend_from_slice(&issued_at.to_be_bytes());
    out.extend_from_slice(&expires_at.to_be_bytes());
    out
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_be_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
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
}

/// Subjects whose credentials are no longer honoured. There is no
/// un-revocation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationList {
    revoked_subjects: BTreeSet<String>,
    as_of: u64,
}

impl RevocationList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, subject_id: &str) -> bool {
        self.revoked_subjects.contains(subject_id)
    }

    pub fn len(&self) -> usize {
        self.revoked_subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.revoked_subjects.is_empty()
    }

    pub fn as_of(&self) -> u64 {
        self.as_of
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Valid,
    Expired,
    Revoked,
    BadSignature,
}

pub fn issue_credential(
    subject_id: &str,
    tenant_id: &str,
    now: u64,
    validity_ms: NonZeroU64,
    root: &TrustRoot,
) -> WorkloadCredential {
    let expires_at = now.saturating_add(validity_ms.get());
    let payload = canonical_payload(subject_id, tenant_id, now, expires_at);
    let signature = root.key.sign(&payload).to_bytes().to_vec();
    WorkloadCredential {
        subject_id: subject_id.to_string(),
        tenant_id: tenant_id.to_string(),
        issued_at: now,
        expires_at,
        signature,
    }
}

/// Checks signature, revocation and validity window, reporting the most
/// severe failure: `BadSignature`, then `Revoked`, then `Expired`.
/// A credential presented before its `issued_at` is reported as `Expired`.
pub fn verify_credential(
    cred: &WorkloadCredential,
    trust_root: &TrustRootKey,
    now: u64,
    revocations: &RevocationList,
) -> Verdict {
    let Ok(sig) = Signature::from_slice(&cred.signature) else {
        return Verdict::BadSignature;
    };
    if trust_root.inner().verify_strict(&cred.canonical_payload(), &sig).is_err() {
        return Verdict::BadSignature;
    }
    if revocations.contains(&cred.subject_id) {
        return Verdict::Revoked;
    }
    if !(cred.issued_at <= now && now < cred.expires_at) {
        return Verdict::Expired;
    }
    Verdict::Valid
}

/// Verifies a credential still in its canonical binary form.
pub fn verify_credential_bytes(
    bytes: &[u8],
    trust_root: &TrustRootKey,
    now: u64,
    revocations: &RevocationList,
) -> Verdict {
    match WorkloadCredential::from_bytes(bytes) {
        Some(cred) => verify_credential(&cred, trust_root, now, revocations),
        None => Verdict::BadSignature,
    }
}

pub fn revoke(rl: &RevocationList, subject_id: &str, now: u64) -> RevocationList {
    let mut next = rl.clone();
    next.revoked_subjects.insert(subject_id.to_string());
    next.as_of = now;
    next
}
