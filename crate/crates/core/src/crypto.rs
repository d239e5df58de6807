//! HMAC-SHA1 based authentication material.
//!
//! Everything the cloud protocol authenticates goes through this module:
//! the `Authorization` field attached to HTTPS requests, the
//! `MESSAGE-INTEGRITY` attribute on relayed commands, the CHAP exchange the
//! relay server runs against a plug, and the serial number a plug derives
//! from its MAC address.
//!
//! All functions are pure. Randomness (nonces, challenges, fresh keys) is
//! always supplied by the caller so that simulation runs stay reproducible.

use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use rand::Rng;
use sha1::Sha1;
use thiserror::Error;

use crate::messages::{DeviceIdentity, MacAddr};

/// Width of a SHA-1 digest.
pub const DIGEST_LEN: usize = 20;
/// Length of an authorization nonce.
pub const NONCE_LEN: usize = 8;
/// Length of a CHAP challenge.
pub const CHALLENGE_LEN: usize = 16;
/// Length of keys minted by the HTTPS server.
pub const ISSUED_KEY_LEN: usize = 16;
/// Maximum accepted key length.
pub const MAX_KEY_LEN: usize = 64;
/// Default acceptance window for authorization timestamps, in seconds.
pub const DEFAULT_AUTH_WINDOW: u64 = 300;
/// Vendor prefix of every derived serial number.
pub const SERIAL_PREFIX: &str = "221";
/// Placeholder carried in the digest slot of a dummy authorization.
pub const DUMMY_DIGEST: &[u8] = b"dummy";

pub type Digest = [u8; DIGEST_LEN];
pub type Nonce = [u8; NONCE_LEN];
pub type Challenge = [u8; CHALLENGE_LEN];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("invalid key: {0}")]
    InvalidKey(&'static str),
    #[error("key role {actual:?} cannot be used here (expected {expected:?})")]
    WrongKeyRole { expected: KeyRole, actual: KeyRole },
}

/// Which party a key belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeyRole {
    PlugKey,
    PhoneKey,
    TempKey,
}

impl KeyRole {
    pub fn code(self) -> u8 {
        match self {
            KeyRole::PlugKey => 1,
            KeyRole::PhoneKey => 2,
            KeyRole::TempKey => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(KeyRole::PlugKey),
            2 => Some(KeyRole::PhoneKey),
            3 => Some(KeyRole::TempKey),
            _ => None,
        }
    }
}

/// A symmetric HMAC key with a fixed role.
#[derive(Clone)]
pub struct SecretKey {
    bytes: Vec<u8>,
    role: KeyRole,
}

impl SecretKey {
    pub fn new(role: KeyRole, bytes: impl Into<Vec<u8>>) -> Result<Self, CryptoError> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(CryptoError::InvalidKey("key is empty"));
        }
        if bytes.len() > MAX_KEY_LEN {
            return Err(CryptoError::InvalidKey("key longer than 64 bytes"));
        }
        Ok(SecretKey { bytes, role })
    }

    /// Mint a fresh key of [`ISSUED_KEY_LEN`] bytes.
    pub fn generate<R: Rng + ?Sized>(role: KeyRole, rng: &mut R) -> Self {
        let mut bytes = vec![0u8; ISSUED_KEY_LEN];
        rng.fill_bytes(&mut bytes);
        SecretKey { bytes, role }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn role(&self) -> KeyRole {
        self.role
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.bytes)
    }

    fn require_role(&self, expected: KeyRole) -> Result<(), CryptoError> {
        if self.role == expected {
            Ok(())
        } else {
            Err(CryptoError::WrongKeyRole {
                expected,
                actual: self.role,
            })
        }
    }
}

impl PartialEq for SecretKey {
    fn eq(&self, other: &Self) -> bool {
        self.role == other.role && ct_eq(&self.bytes, &other.bytes)
    }
}

impl Eq for SecretKey {}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey({:?}, {})", self.role, self.to_hex())
    }
}

/// Byte equality that touches every byte of equal-length inputs.
pub fn ct_eq(a: &[u8], b: &[u8]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

pub fn hmac_sha1(key: &[u8], message: &[u8]) -> Result<Digest, CryptoError> {
    if key.is_empty() {
        return Err(CryptoError::InvalidKey("key is empty"));
    }
    Ok(hmac_digest(key, message))
}

fn hmac_digest(key: &[u8], message: &[u8]) -> Digest {
    // HMAC accepts keys of any length; emptiness is rejected by callers.
    let mut mac =
        <Hmac<Sha1> as KeyInit>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(message);
    mac.finalize().into_bytes().into()
}

/// Digest slot of an authorization field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthDigest {
    Hmac(Digest),
    /// The literal `dummy` placeholder sent when the plug has no key yet.
    Dummy,
}

impl AuthDigest {
    pub fn as_bytes(&self) -> &[u8] {
        match self {
            AuthDigest::Hmac(d) => d,
            AuthDigest::Dummy => DUMMY_DIGEST,
        }
    }
}

/// Contents of an `Authorization` header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthField {
    /// Serial of the plug the request concerns.
    pub serial: String,
    pub timestamp: u64,
    pub nonce: Nonce,
    pub digest: AuthDigest,
}

impl AuthField {
    pub fn is_dummy(&self) -> bool {
        matches!(self.digest, AuthDigest::Dummy)
    }
}

/// The string both sides feed to HMAC: `serial:timestamp:hex(nonce)`.
pub fn canonical_auth_string(serial: &str, timestamp: u64, nonce: &Nonce) -> String {
    format!("{serial}:{timestamp}:{}", hex::encode(nonce))
}

pub fn compute_authorization(
    key: &SecretKey,
    identity: &DeviceIdentity,
    timestamp: u64,
    nonce: Nonce,
) -> AuthField {
    authorize_serial(key, &identity.serial, timestamp, nonce)
}

/// Same as [`compute_authorization`] when only the serial is at hand.
pub fn authorize_serial(key: &SecretKey, serial: &str, timestamp: u64, nonce: Nonce) -> AuthField {
    let input = canonical_auth_string(serial, timestamp, &nonce);
    AuthField {
        serial: serial.to_string(),
        timestamp,
        nonce,
        digest: AuthDigest::Hmac(hmac_digest(key.bytes(), input.as_bytes())),
    }
}

pub fn dummy_authorization(identity: &DeviceIdentity, timestamp: u64) -> AuthField {
    AuthField {
        serial: identity.serial.clone(),
        timestamp,
        nonce: [0; NONCE_LEN],
        digest: AuthDigest::Dummy,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    Dummy,
    Stale,
    BadDigest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(self) -> bool {
        self == Verdict::Accept
    }
}

pub fn verify_authorization(key: &SecretKey, field: &AuthField, now: u64, window: u64) -> Verdict {
    let digest = match &field.digest {
        AuthDigest::Dummy => return Verdict::Reject(RejectReason::Dummy),
        AuthDigest::Hmac(d) => d,
    };
    if now.abs_diff(field.timestamp) > window {
        return Verdict::Reject(RejectReason::Stale);
    }
    let expected = authorize_serial(key, &field.serial, field.timestamp, field.nonce);
    if ct_eq(expected.digest.as_bytes(), digest) {
        Verdict::Accept
    } else {
        Verdict::Reject(RejectReason::BadDigest)
    }
}

/// A completed CHAP round: the relay's challenge and the plug's answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChapExchange {
    pub challenge: Challenge,
    pub response: Digest,
    pub peer_serial: String,
}

fn chap_digest(key: &SecretKey, challenge: &Challenge, serial: &str) -> Digest {
    let mut input = Vec::with_capacity(CHALLENGE_LEN + serial.len());
    input.extend_from_slice(challenge);
    input.extend_from_slice(serial.as_bytes());
    hmac_digest(key.bytes(), &input)
}

pub fn chap_respond(
    key: &SecretKey,
    challenge: Challenge,
    peer: &DeviceIdentity,
) -> Result<ChapExchange, CryptoError> {
    key.require_role(KeyRole::PlugKey)?;
    Ok(ChapExchange {
        challenge,
        response: chap_digest(key, &challenge, &peer.serial),
        peer_serial: peer.serial.clone(),
    })
}

pub fn chap_verify(key: &SecretKey, exchange: &ChapExchange) -> Result<Verdict, CryptoError> {
    key.require_role(KeyRole::PlugKey)?;
    let expected = chap_digest(key, &exchange.challenge, &exchange.peer_serial);
    Ok(if ct_eq(&expected, &exchange.response) {
        Verdict::Accept
    } else {
        Verdict::Reject(RejectReason::BadDigest)
    })
}

/// `MESSAGE-INTEGRITY` attribute of a relayed message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntegrityAttribute(pub Digest);

impl IntegrityAttribute {
    pub const ZERO: IntegrityAttribute = IntegrityAttribute([0; DIGEST_LEN]);
}

/// `message_bytes` must be the serialized message with the attribute zeroed.
pub fn compute_message_integrity(key: &SecretKey, message_bytes: &[u8]) -> IntegrityAttribute {
    IntegrityAttribute(hmac_digest(key.bytes(), message_bytes))
}

pub fn verify_message_integrity(
    key: &SecretKey,
    message_bytes: &[u8],
    attribute: &IntegrityAttribute,
) -> Verdict {
    let expected = compute_message_integrity(key, message_bytes);
    if ct_eq(&expected.0, &attribute.0) {
        Verdict::Accept
    } else {
        Verdict::Reject(RejectReason::BadDigest)
    }
}

/// MAC carried by a remote smartphone-key fetch. Keyed with the plug serial,
/// which the server can recompute from its binding records alone.
pub fn key_fetch_mac(phone_id: &str, serial: &str, timestamp: u64) -> Digest {
    let mut input = Vec::new();
    input.extend_from_slice(phone_id.as_bytes());
    input.extend_from_slice(serial.as_bytes());
    input.extend_from_slice(timestamp.to_string().as_bytes());
    let key: &[u8] = if serial.is_empty() {
        b"\0"
    } else {
        serial.as_bytes()
    };
    hmac_digest(key, &input)
}

/// Serial number a genuine plug reports: the vendor prefix followed by the
/// uppercase hex of its MAC.
pub fn derive_serial(mac: MacAddr) -> String {
    format!("{SERIAL_PREFIX}{}", hex::encode_upper(mac.octets()))
}

pub fn random_nonce<R: Rng + ?Sized>(rng: &mut R) -> Nonce {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    nonce
}

pub fn random_challenge<R: Rng + ?Sized>(rng: &mut R) -> Challenge {
    let mut challenge = [0u8; CHALLENGE_LEN];
    rng.fill_bytes(&mut challenge);
    challenge
}
