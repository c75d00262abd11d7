//! Per-tenant sealing with customer-managed keys.
//!
//! Blob layout: `u32 BE tenant length | tenant id | 12-byte nonce |
//! ChaCha20-Poly1305 ciphertext+tag`. The tenant header is bound as
//! associated data, so any bit flip in the blob fails authentication.
//! Nonces are derived from the tenant key and payload, which makes sealing
//! deterministic and keeps scenario output reproducible.

use std::collections::BTreeMap;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hmac::{Hmac, Mac};
use sha2::Sha256;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SealError {
    #[error("no key registered for tenant `{0}`")]
    UnknownTenant(String),
    #[error("blob sealed for another tenant cannot be opened by `{0}`")]
    TenantIsolation(String),
    #[error("sealed blob failed authentication")]
    Integrity,
}

/// Tenant key material. Keys never leave the store; callers only seal and open.
#[derive(Default, Clone)]
pub struct Keystore {
    keys: BTreeMap<String, [u8; 32]>,
}

impl std::fmt::Debug for Keystore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Keystore").field("tenants", &self.keys.keys().collect::<Vec<_>>()).finish()
    }
}

impl Keystore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, tenant_id: impl Into<String>, key: [u8; 32]) {
        self.keys.insert(tenant_id.into(), key);
    }

    pub fn contains(&self, tenant_id: &str) -> bool {
        self.keys.contains_key(tenant_id)
    }

    fn key(&self, tenant_id: &str) -> Result<&[u8; 32], SealError> {
        self.keys.get(tenant_id).ok_or_else(|| SealError::UnknownTenant(tenant_id.to_string()))
    }
}

fn header(tenant_id: &str) -> Vec<u8> {
    let mut h = Vec::with_capacity(4 + tenant_id.len());
    h.extend_from_slice(&(tenant_id.len() as u32).to_be_bytes());
    h.extend_from_slice(tenant_id.as_bytes());
    h
}

fn derive_nonce(key: &[u8; 32], header: &[u8], payload: &[u8]) -> [u8; 12] {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(b"grid-guard/seal-nonce/v1");
    mac.update(header);
    mac.update(payload);
    let out = mac.finalize().into_bytes();
    out[..12].try_into().expect("32-byte digest")
}

pub fn seal_for_tenant(payload: &[u8], tenant_id: &str, keystore: &Keystore) -> Result<Vec<u8>, SealError> {
    let key = keystore.key(tenant_id)?;
    let aad = header(tenant_id);
    let nonce = derive_nonce(key, &aad, payload);
    let cipher = ChaCha20Poly1305::new(Key::from_slice(key));
    let ct = cipher
        .encrypt(Nonce::from_slice(&nonce), Payload { msg: payload, aad: &aad })
        .expect("in-memory encryption does not fail");
    let mut blob = aad;
    blob.extend_from_slice(&nonce);
    blob.extend_from_slice(&ct);
    Ok(blob)
}

fn split_blob(blob: &[u8]) -> Option<(&[u8], &str, &[u8], &[u8])> {
    let len = u32::from_be_bytes(blob.get(..4)?.try_into().ok()?) as usize;
    let header_end = 4usize.checked_add(len)?;
    let tenant = std::str::from_utf8(blob.get(4..header_end)?).ok()?;
    let nonce = blob.get(header_end..header_end + 12)?;
    let ct = blob.get(header_end + 12..)?;
    Some((&blob[..header_end], tenant, nonce, ct))
}

fn try_open(key: &[u8; 32], aad: &[u8], nonce: &[u8], ct: &[u8]) -> Option<Vec<u8>> {
    ChaCha20Poly1305::new(Key::from_slice(key))
        .decrypt(Nonce::from_slice(nonce), Payload { msg: ct, aad })
        .ok()
}

/// Opens a blob with the requesting tenant's key.
///
/// A blob that authenticates under the key of the tenant named in its
/// header, but not under the requester's, is a cross-tenant access and
/// reported as [`SealError::TenantIsolation`]. Anything else that fails to
/// authenticate is [`SealError::Integrity`].
pub fn open_for_tenant(blob: &[u8], tenant_id: &str, keystore: &Keystore) -> Result<Vec<u8>, SealError> {
    let key = keystore.key(tenant_id)?;
    let (aad, owner, nonce, ct) = split_blob(blob).ok_or(SealError::Integrity)?;
    if owner == tenant_id {
        return try_open(key, aad, nonce, ct).ok_or(SealError::Integrity);
    }
    match keystore.key(owner) {
        Ok(owner_key) if try_open(owner_key, aad, nonce, ct).is_some() => {
            Err(SealError::TenantIsolation(tenant_id.to_string()))
        }
        _ => Err(SealError::Integrity),
    }
}
