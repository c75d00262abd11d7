//! Format-preserving tokenization of decimal digit strings.
//!
//! An 8-round balanced Feistel network over the two halves of the digit
//! string, with HMAC-SHA256 as the keyed round function. Odd lengths are
//! padded with one leading zero digit and the permutation is cycle-walked
//! until the leading digit is zero again, which keeps the map a bijection
//! on exactly `10^n` values.

use hmac::{Hmac, Mac};
use sha2::Sha256;
use thiserror::Error;

pub const MAX_DIGITS: usize = 64;
const ROUNDS: u8 = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FpeError {
    #[error("input contains a non-digit character at position {0}")]
    Alphabet(usize),
    #[error("input length {0} outside 1..={MAX_DIGITS}")]
    Length(usize),
}

type HmacSha256 = Hmac<Sha256>;

struct Network {
    mac: HmacSha256,
    /// Padded length (always even).
    width: usize,
    /// Original length, bound into every round so lengths are independent.
    len: usize,
    half_modulus: u128,
}

impl Network {
    fn new(key: &[u8], len: usize) -> Self {
        let width = len + len % 2;
        Self {
            mac: HmacSha256::new_from_slice(key).expect("HMAC accepts any key length"),
            width,
            len,
            half_modulus: 10u128.pow((width / 2) as u32),
        }
    }

    fn round(&self, round: u8, half: u128) -> u128 {
        let mut mac = self.mac.clone();
        mac.update(b"grid-guard/fpe/v1");
        mac.update(&[self.len as u8, round]);
        mac.update(&half.to_be_bytes());
        let out = mac.finalize().into_bytes();
        let head: [u8; 16] = out[..16].try_into().expect("sha256 output is 32 bytes");
        u128::from_be_bytes(head) % self.half_modulus
    }

    fn encrypt_once(&self, (mut left, mut right): (u128, u128)) -> (u128, u128) {
        for i in 0..ROUNDS {
            let mixed = (left + self.round(i, right)) % self.half_modulus;
            left = right;
            right = mixed;
        }
        (left, right)
    }

    fn decrypt_once(&self, (mut left, mut right): (u128, u128)) -> (u128, u128) {
        for i in (0..ROUNDS).rev() {
            let prev_left = (right + self.half_modulus - self.round(i, left)) % self.half_modulus;
            right = left;
            left = prev_left;
        }
        (left, right)
    }

    /// For odd lengths the padded value is in-domain iff its leading digit
    /// is zero, i.e. the left half is below `10^(half - 1)`.
    fn in_domain(&self, (left, _): (u128, u128)) -> bool {
        self.width == self.len || left < self.half_modulus / 10
    }

    fn split(&self, digits: &str) -> (u128, u128) {
        let padded = if self.width > self.len {
            format!("0{digits}")
        } else {
            digits.to_string()
        };
        let (l, r) = padded.split_at(self.width / 2);
        (l.parse().expect("validated digits"), r.parse().expect("validated digits"))
    }

    fn join(&self, (left, right): (u128, u128)) -> String {
        let half = self.width / 2;
        let padded = format!("{left:0half$}{right:0half$}");
        padded[self.width - self.len..].to_string()
    }
}

fn validate(input: &str) -> Result<(), FpeError> {
    if let Some(pos) = input.bytes().position(|b| !b.is_ascii_digit()) {
        return Err(FpeError::Alphabet(pos));
    }
    if input.is_empty() || input.len() > MAX_DIGITS {
        return Err(FpeError::Length(input.len()));
    }
    Ok(())
}

pub fn tokenize_field(plaintext: &str, key: &[u8]) -> Result<String, FpeError> {
    validate(plaintext)?;
    let net = Network::new(key, plaintext.len());
    let mut state = net.encrypt_once(net.split(plaintext));
    while !net.in_domain(state) {
        state = net.encrypt_once(state);
    }
    Ok(net.join(state))
}

pub fn detokenize_field(token: &str, key: &[u8]) -> Result<String, FpeError> {
    validate(token)?;
    let net = Network::new(key, token.len());
    let mut state = net.decrypt_once(net.split(token));
    while !net.in_domain(state) {
        state = net.decrypt_once(state);
    }
    Ok(net.join(state))
}
