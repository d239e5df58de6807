//! Wire messages exchanged by plugs, smartphones, and the two cloud servers.
//!
//! Frame layout: `tag:u8 | body_len:u32be | body`. Bodies are a fixed-order
//! field list. Integers are big-endian, strings and byte strings carry a
//! `u16` length prefix, optional values a one-byte presence flag. Keys and
//! digests travel as raw bytes. Serialization is canonical, so equal values
//! always produce equal bytes.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::crypto::{
    self, AuthDigest, AuthField, ChapExchange, Digest, IntegrityAttribute, KeyRole, SecretKey,
    CHALLENGE_LEN, DIGEST_LEN, DUMMY_DIGEST, NONCE_LEN,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {offset}: {reason}")]
pub struct ParseError {
    pub offset: usize,
    pub reason: String,
}

impl ParseError {
    fn new(offset: usize, reason: impl Into<String>) -> Self {
        ParseError {
            offset,
            reason: reason.into(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub fn octets(&self) -> [u8; 6] {
        self.0
    }

    pub fn oui(&self) -> [u8; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d, e, g] = self.0;
        write!(f, "{a:02x}:{b:02x}:{c:02x}:{d:02x}:{e:02x}:{g:02x}")
    }
}

impl fmt::Debug for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MacAddr({self})")
    }
}

impl FromStr for MacAddr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split([':', '-']).collect();
        if parts.len() != 6 {
            return Err(format!("expected 6 octets in MAC address {s:?}"));
        }
        let mut out = [0u8; 6];
        for (slot, part) in out.iter_mut().zip(parts) {
            if part.len() != 2 {
                return Err(format!("bad octet {part:?} in MAC address {s:?}"));
            }
            *slot = u8::from_str_radix(part, 16).map_err(|e| format!("{s:?}: {e}"))?;
        }
        Ok(MacAddr(out))
    }
}

/// What a plug says about itself during pairing and binding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceIdentity {
    pub mac: MacAddr,
    pub serial: String,
    pub description: String,
}

impl DeviceIdentity {
    /// Identity of a real device: the serial is derived from the MAC.
    pub fn genuine(mac: MacAddr, description: impl Into<String>) -> Self {
        DeviceIdentity {
            mac,
            serial: crypto::derive_serial(mac),
            description: description.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApInfo {
    pub ssid: String,
    pub ap_mac: MacAddr,
}

/// Home network credentials handed to the plug during pairing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WifiCredentials {
    pub ap: ApInfo,
    pub passphrase: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlugStatus {
    SwitchOff = 0,
    SwitchOn = 1,
    Unavailable = 3,
}

impl PlugStatus {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PlugStatus::SwitchOff),
            1 => Some(PlugStatus::SwitchOn),
            3 => Some(PlugStatus::Unavailable),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SwitchAction {
    Off = 0,
    On = 1,
}

impl SwitchAction {
    pub fn resulting_status(self) -> PlugStatus {
        match self {
            SwitchAction::Off => PlugStatus::SwitchOff,
            SwitchAction::On => PlugStatus::SwitchOn,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            SwitchAction::Off => SwitchAction::On,
            SwitchAction::On => SwitchAction::Off,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SwitchAction::Off),
            1 => Some(SwitchAction::On),
            _ => None,
        }
    }
}

/// Switch request on the unauthenticated LAN path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalAction {
    Set(SwitchAction),
    Toggle,
}

impl LocalAction {
    fn code(self) -> u8 {
        match self {
            LocalAction::Set(a) => a as u8,
            LocalAction::Toggle => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            2 => Some(LocalAction::Toggle),
            c => SwitchAction::from_code(c).map(LocalAction::Set),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    BindRejected = 1,
    NotBound = 2,
    AuthRejected = 3,
    Unavailable = 4,
    AllocationDenied = 5,
    WrongChannel = 6,
    BadRequest = 7,
}

impl ErrorCode {
    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => ErrorCode::BindRejected,
            2 => ErrorCode::NotBound,
            3 => ErrorCode::AuthRejected,
            4 => ErrorCode::Unavailable,
            5 => ErrorCode::AllocationDenied,
            6 => ErrorCode::WrongChannel,
            7 => ErrorCode::BadRequest,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BindRequest {
    pub plug: DeviceIdentity,
    pub phone_id: String,
    pub phone_description: String,
    pub wifi: ApInfo,
    pub timestamp: u64,
    pub auth: AuthField,
    pub re_register: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BindResponse {
    TempKeyIssued {
        temp_key: SecretKey,
    },
    KeysIssued {
        plug_key: SecretKey,
        phone_key: SecretKey,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlCommand {
    pub phone_id: String,
    pub target_serial: String,
    pub action: SwitchAction,
    pub auth: AuthField,
}

/// A command as it leaves the relay server towards the allocation holder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnRelayedCommand {
    pub relay_port: u16,
    pub command: ControlCommand,
    pub integrity: IntegrityAttribute,
}

impl TurnRelayedCommand {
    /// Serialized form with the integrity attribute zeroed, i.e. the bytes
    /// the attribute is computed over.
    pub fn integrity_input(&self) -> Vec<u8> {
        let mut zeroed = self.clone();
        zeroed.integrity = IntegrityAttribute::ZERO;
        serialize(&ProtocolMessage::TurnRelayedCommand(zeroed))
    }

    pub fn seal(relay_port: u16, command: ControlCommand, key: &SecretKey) -> Self {
        let mut msg = TurnRelayedCommand {
            relay_port,
            command,
            integrity: IntegrityAttribute::ZERO,
        };
        msg.integrity = crypto::compute_message_integrity(key, &msg.integrity_input());
        msg
    }

    pub fn verify(&self, key: &SecretKey) -> crypto::Verdict {
        crypto::verify_message_integrity(key, &self.integrity_input(), &self.integrity)
    }
}

macro_rules! message_kinds {
    ($($name:ident = $tag:literal),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum MessageKind {
            $($name = $tag),*
        }

        impl MessageKind {
            pub const ALL: &'static [MessageKind] = &[$(MessageKind::$name),*];

            pub fn tag(self) -> u8 {
                self as u8
            }

            pub fn from_tag(tag: u8) -> Option<Self> {
                match tag {
                    $($tag => Some(MessageKind::$name),)*
                    _ => None,
                }
            }

            pub fn name(self) -> &'static str {
                match self {
                    $(MessageKind::$name => stringify!($name)),*
                }
            }
        }
    };
}

message_kinds! {
    PairGetInfoRequest = 1,
    PairGetInfoResponse = 2,
    PairSetupRequest = 3,
    PairSetupAck = 4,
    BindRequest = 5,
    BindResponse = 6,
    ErrorReply = 7,
    KeyFetchRequest = 8,
    KeyFetchResponse = 9,
    PhoneKeyDelivery = 10,
    StatusUpdate = 11,
    StatusAck = 12,
    StatusQuery = 13,
    StatusReply = 14,
    ControlCommand = 15,
    ControlAck = 16,
    LocalControl = 17,
    LocalControlAck = 18,
    TurnChallengeRequest = 19,
    TurnChallenge = 20,
    TurnAllocateRequest = 21,
    TurnAllocateResponse = 22,
    TurnAllocationNotice = 23,
    TurnRevoke = 24,
    KeyLookupRequest = 25,
    KeyLookupResponse = 26,
    RelayForward = 27,
    TurnRelayedCommand = 28,
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MessageKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MessageKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown message kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolMessage {
    PairGetInfoRequest,
    PairGetInfoResponse {
        plug: DeviceIdentity,
    },
    PairSetupRequest {
        phone_id: String,
        phone_description: String,
        timestamp: u64,
        wifi: WifiCredentials,
    },
    PairSetupAck {
        serial: String,
    },
    BindRequest(BindRequest),
    BindResponse(BindResponse),
    ErrorReply {
        in_reply_to: MessageKind,
        code: ErrorCode,
    },
    KeyFetchRequest {
        phone_id: String,
        serial: String,
        timestamp: u64,
        mac: Digest,
    },
    KeyFetchResponse {
        serial: String,
        phone_key: SecretKey,
    },
    PhoneKeyDelivery {
        serial: String,
        phone_key: SecretKey,
    },
    StatusUpdate {
        serial: String,
        status: PlugStatus,
        auth: AuthField,
    },
    StatusAck {
        serial: String,
    },
    StatusQuery {
        phone_id: String,
        serial: String,
        auth: AuthField,
    },
    StatusReply {
        serial: String,
        status: PlugStatus,
    },
    ControlCommand(ControlCommand),
    ControlAck {
        serial: String,
        action: SwitchAction,
    },
    LocalControl {
        action: LocalAction,
    },
    LocalControlAck {
        serial: String,
        status: PlugStatus,
    },
    TurnChallengeRequest {
        serial: String,
    },
    TurnChallenge {
        challenge: crypto::Challenge,
    },
    TurnAllocateRequest {
        serial: String,
        chap: ChapExchange,
    },
    TurnAllocateResponse {
        relay_port: u16,
    },
    TurnAllocationNotice {
        serial: String,
        relay_port: u16,
    },
    TurnRevoke {
        serial: String,
    },
    KeyLookupRequest {
        serial: String,
    },
    KeyLookupResponse {
        serial: String,
        plug_key: Option<SecretKey>,
    },
    RelayForward {
        command: ControlCommand,
    },
    TurnRelayedCommand(TurnRelayedCommand),
}

impl ProtocolMessage {
    pub fn kind(&self) -> MessageKind {
        use ProtocolMessage as M;
        match self {
            M::PairGetInfoRequest => MessageKind::PairGetInfoRequest,
            M::PairGetInfoResponse { .. } => MessageKind::PairGetInfoResponse,
            M::PairSetupRequest { .. } => MessageKind::PairSetupRequest,
            M::PairSetupAck { .. } => MessageKind::PairSetupAck,
            M::BindRequest(_) => MessageKind::BindRequest,
            M::BindResponse(_) => MessageKind::BindResponse,
            M::ErrorReply { .. } => MessageKind::ErrorReply,
            M::KeyFetchRequest { .. } => MessageKind::KeyFetchRequest,
            M::KeyFetchResponse { .. } => MessageKind::KeyFetchResponse,
            M::PhoneKeyDelivery { .. } => MessageKind::PhoneKeyDelivery,
            M::StatusUpdate { .. } => MessageKind::StatusUpdate,
            M::StatusAck { .. } => MessageKind::StatusAck,
            M::StatusQuery { .. } => MessageKind::StatusQuery,
            M::StatusReply { .. } => MessageKind::StatusReply,
            M::ControlCommand(_) => MessageKind::ControlCommand,
            M::ControlAck { .. } => MessageKind::ControlAck,
            M::LocalControl { .. } => MessageKind::LocalControl,
            M::LocalControlAck { .. } => MessageKind::LocalControlAck,
            M::TurnChallengeRequest { .. } => MessageKind::TurnChallengeRequest,
            M::TurnChallenge { .. } => MessageKind::TurnChallenge,
            M::TurnAllocateRequest { .. } => MessageKind::TurnAllocateRequest,
            M::TurnAllocateResponse { .. } => MessageKind::TurnAllocateResponse,
            M::TurnAllocationNotice { .. } => MessageKind::TurnAllocationNotice,
            M::TurnRevoke { .. } => MessageKind::TurnRevoke,
            M::KeyLookupRequest { .. } => MessageKind::KeyLookupRequest,
            M::KeyLookupResponse { .. } => MessageKind::KeyLookupResponse,
            M::RelayForward { .. } => MessageKind::RelayForward,
            M::TurnRelayedCommand(_) => MessageKind::TurnRelayedCommand,
        }
    }

    /// Copy safe to write into a capture: the Wi-Fi passphrase is replaced
    /// by asterisks of the same length.
    pub fn redacted(&self) -> ProtocolMessage {
        let mut out = self.clone();
        if let ProtocolMessage::PairSetupRequest { wifi, .. } = &mut out {
            wifi.passphrase = "*".repeat(wifi.passphrase.chars().count());
        }
        out
    }

    /// Leaf fields as `(name, raw bytes)`, in wire order. Integers are given
    /// in their big-endian wire form, strings as UTF-8, keys and digests raw.
    pub fn fields(&self) -> Vec<(String, Vec<u8>)> {
        let mut out = FieldList::default();
        use ProtocolMessage as M;
        match self {
            M::PairGetInfoRequest => {}
            M::PairGetInfoResponse { plug } => out.identity("plug", plug),
            M::PairSetupRequest {
                phone_id,
                phone_description,
                timestamp,
                wifi,
            } => {
                out.str("phone_id", phone_id);
                out.str("phone_description", phone_description);
                out.u64("timestamp", *timestamp);
                out.ap("wifi", &wifi.ap);
                out.str("wifi.passphrase", &wifi.passphrase);
            }
            M::PairSetupAck { serial } => out.str("serial", serial),
            M::BindRequest(req) => {
                out.identity("plug", &req.plug);
                out.str("phone_id", &req.phone_id);
                out.str("phone_description", &req.phone_description);
                out.ap("wifi", &req.wifi);
                out.u64("timestamp", req.timestamp);
                out.auth("auth", &req.auth);
                out.push("re_register", vec![req.re_register as u8]);
            }
            M::BindResponse(BindResponse::TempKeyIssued { temp_key }) => {
                out.push("temp_key", temp_key.bytes().to_vec())
            }
            M::BindResponse(BindResponse::KeysIssued {
                plug_key,
                phone_key,
            }) => {
                out.push("plug_key", plug_key.bytes().to_vec());
                out.push("phone_key", phone_key.bytes().to_vec());
            }
            M::ErrorReply { in_reply_to, code } => {
                out.push("in_reply_to", vec![in_reply_to.tag()]);
                out.push("code", vec![*code as u8]);
            }
            M::KeyFetchRequest {
                phone_id,
                serial,
                timestamp,
                mac,
            } => {
                out.str("phone_id", phone_id);
                out.str("serial", serial);
                out.u64("timestamp", *timestamp);
                out.push("mac", mac.to_vec());
            }
            M::KeyFetchResponse { serial, phone_key }
            | M::PhoneKeyDelivery { serial, phone_key } => {
                out.str("serial", serial);
                out.push("phone_key", phone_key.bytes().to_vec());
            }
            M::StatusUpdate {
                serial,
                status,
                auth,
            } => {
                out.str("serial", serial);
                out.push("status", vec![status.code()]);
                out.auth("auth", auth);
            }
            M::StatusAck { serial }
            | M::TurnChallengeRequest { serial }
            | M::TurnRevoke { serial }
            | M::KeyLookupRequest { serial } => out.str("serial", serial),
            M::StatusQuery {
                phone_id,
                serial,
                auth,
            } => {
                out.str("phone_id", phone_id);
                out.str("serial", serial);
                out.auth("auth", auth);
            }
            M::StatusReply { serial, status } | M::LocalControlAck { serial, status } => {
                out.str("serial", serial);
                out.push("status", vec![status.code()]);
            }
            M::ControlCommand(cmd) => out.command("", cmd),
            M::ControlAck { serial, action } => {
                out.str("serial", serial);
                out.push("action", vec![*action as u8]);
            }
            M::LocalControl { action } => out.push("action", vec![action.code()]),
            M::TurnChallenge { challenge } => out.push("challenge", challenge.to_vec()),
            M::TurnAllocateRequest { serial, chap } => {
                out.str("serial", serial);
                out.push("chap.challenge", chap.challenge.to_vec());
                out.push("chap.response", chap.response.to_vec());
                out.str("chap.peer_serial", &chap.peer_serial);
            }
            M::TurnAllocateResponse { relay_port } => {
                out.push("relay_port", relay_port.to_be_bytes().to_vec())
            }
            M::TurnAllocationNotice { serial, relay_port } => {
                out.str("serial", serial);
                out.push("relay_port", relay_port.to_be_bytes().to_vec());
            }
            M::KeyLookupResponse { serial, plug_key } => {
                out.str("serial", serial);
                if let Some(key) = plug_key {
                    out.push("plug_key", key.bytes().to_vec());
                }
            }
            M::RelayForward { command } => out.command("command.", command),
            M::TurnRelayedCommand(relayed) => {
                out.push("relay_port", relayed.relay_port.to_be_bytes().to_vec());
                out.command("command.", &relayed.command);
                out.push("integrity", relayed.integrity.0.to_vec());
            }
        }
        out.0
    }
}

#[derive(Default)]
struct FieldList(Vec<(String, Vec<u8>)>);

impl FieldList {
    fn push(&mut self, name: &str, bytes: Vec<u8>) {
        self.0.push((name.to_string(), bytes));
    }

    fn str(&mut self, name: &str, value: &str) {
        self.push(name, value.as_bytes().to_vec());
    }

    fn u64(&mut self, name: &str, value: u64) {
        self.push(name, value.to_be_bytes().to_vec());
    }

    fn identity(&mut self, prefix: &str, id: &DeviceIdentity) {
        self.push(&format!("{prefix}.mac"), id.mac.0.to_vec());
        self.str(&format!("{prefix}.serial"), &id.serial);
        self.str(&format!("{prefix}.description"), &id.description);
    }

    fn ap(&mut self, prefix: &str, ap: &ApInfo) {
        self.str(&format!("{prefix}.ssid"), &ap.ssid);
        self.push(&format!("{prefix}.ap_mac"), ap.ap_mac.0.to_vec());
    }

    fn auth(&mut self, prefix: &str, auth: &AuthField) {
        self.str(&format!("{prefix}.serial"), &auth.serial);
        self.u64(&format!("{prefix}.timestamp"), auth.timestamp);
        self.push(&format!("{prefix}.nonce"), auth.nonce.to_vec());
        self.push(&format!("{prefix}.digest"), auth.digest.as_bytes().to_vec());
    }

    fn command(&mut self, prefix: &str, cmd: &ControlCommand) {
        self.str(&format!("{prefix}phone_id"), &cmd.phone_id);
        self.str(&format!("{prefix}target_serial"), &cmd.target_serial);
        self.push(&format!("{prefix}action"), vec![cmd.action as u8]);
        self.auth(&format!("{prefix}auth"), &cmd.auth);
    }
}

const HEADER_LEN: usize = 5;

pub fn serialize(msg: &ProtocolMessage) -> Vec<u8> {
    let mut body = Writer::default();
    body.message(msg);
    let body = body.0;
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.push(msg.kind().tag());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn message_kind(bytes: &[u8]) -> Result<MessageKind, ParseError> {
    let tag = *bytes
        .first()
        .ok_or_else(|| ParseError::new(0, "empty input"))?;
    MessageKind::from_tag(tag).ok_or_else(|| ParseError::new(0, format!("unknown tag {tag}")))
}

pub fn deserialize(bytes: &[u8]) -> Result<ProtocolMessage, ParseError> {
    let kind = message_kind(bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(ParseError::new(bytes.len(), "truncated frame header"));
    }
    let body_len = u32::from_be_bytes(bytes[1..5].try_into().unwrap()) as usize;
    let available = bytes.len() - HEADER_LEN;
    if available < body_len {
        return Err(ParseError::new(
            bytes.len(),
            format!("truncated body: need {body_len} bytes, have {available}"),
        ));
    }
    if available > body_len {
        return Err(ParseError::new(
            HEADER_LEN + body_len,
            "trailing bytes after frame",
        ));
    }
    let mut r = Reader {
        buf: &bytes[..HEADER_LEN + body_len],
        pos: HEADER_LEN,
    };
    let msg = r.message(kind)?;
    if r.pos != r.buf.len() {
        return Err(ParseError::new(r.pos, "unconsumed bytes in body"));
    }
    Ok(msg)
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }

    fn raw(&mut self, v: &[u8]) {
        self.0.extend_from_slice(v);
    }

    fn bytes(&mut self, v: &[u8]) {
        let len = u16::try_from(v.len()).expect("field longer than 65535 bytes");
        self.u16(len);
        self.raw(v);
    }

    fn str(&mut self, v: &str) {
        self.bytes(v.as_bytes());
    }

    fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }

    fn mac(&mut self, v: MacAddr) {
        self.raw(&v.0);
    }

    fn key(&mut self, k: &SecretKey) {
        self.u8(k.role().code());
        self.u8(k.bytes().len() as u8);
        self.raw(k.bytes());
    }

    fn identity(&mut self, id: &DeviceIdentity) {
        self.mac(id.mac);
        self.str(&id.serial);
        self.str(&id.description);
    }

    fn ap(&mut self, ap: &ApInfo) {
        self.str(&ap.ssid);
        self.mac(ap.ap_mac);
    }

    fn auth(&mut self, a: &AuthField) {
        self.str(&a.serial);
        self.u64(a.timestamp);
        self.raw(&a.nonce);
        let digest = a.digest.as_bytes();
        self.u8(digest.len() as u8);
        self.raw(digest);
    }

    fn command(&mut self, c: &ControlCommand) {
        self.str(&c.phone_id);
        self.str(&c.target_serial);
        self.u8(c.action as u8);
        self.auth(&c.auth);
    }

    fn message(&mut self, msg: &ProtocolMessage) {
        use ProtocolMessage as M;
        match msg {
            M::PairGetInfoRequest => {}
            M::PairGetInfoResponse { plug } => self.identity(plug),
            M::PairSetupRequest {
                phone_id,
                phone_description,
                timestamp,
                wifi,
            } => {
                self.str(phone_id);
                self.str(phone_description);
                self.u64(*timestamp);
                self.ap(&wifi.ap);
                self.str(&wifi.passphrase);
            }
            M::PairSetupAck { serial }
            | M::StatusAck { serial }
            | M::TurnChallengeRequest { serial }
            | M::TurnRevoke { serial }
            | M::KeyLookupRequest { serial } => self.str(serial),
            M::BindRequest(req) => {
                self.identity(&req.plug);
                self.str(&req.phone_id);
                self.str(&req.phone_description);
                self.ap(&req.wifi);
                self.u64(req.timestamp);
                self.auth(&req.auth);
                self.bool(req.re_register);
            }
            M::BindResponse(BindResponse::TempKeyIssued { temp_key }) => {
                self.u8(0);
                self.key(temp_key);
            }
            M::BindResponse(BindResponse::KeysIssued {
                plug_key,
                phone_key,
            }) => {
                self.u8(1);
                self.key(plug_key);
                self.key(phone_key);
            }
            M::ErrorReply { in_reply_to, code } => {
                self.u8(in_reply_to.tag());
                self.u8(*code as u8);
            }
            M::KeyFetchRequest {
                phone_id,
                serial,
                timestamp,
                mac,
            } => {
                self.str(phone_id);
                self.str(serial);
                self.u64(*timestamp);
                self.raw(mac);
            }
            M::KeyFetchResponse { serial, phone_key }
            | M::PhoneKeyDelivery { serial, phone_key } => {
                self.str(serial);
                self.key(phone_key);
            }
            M::StatusUpdate {
                serial,
                status,
                auth,
            } => {
                self.str(serial);
                self.u8(status.code());
                self.auth(auth);
            }
            M::StatusQuery {
                phone_id,
                serial,
                auth,
            } => {
                self.str(phone_id);
                self.str(serial);
                self.auth(auth);
            }
            M::StatusReply { serial, status } | M::LocalControlAck { serial, status } => {
                self.str(serial);
                self.u8(status.code());
            }
            M::ControlCommand(cmd) | M::RelayForward { command: cmd } => self.command(cmd),
            M::ControlAck { serial, action } => {
                self.str(serial);
                self.u8(*action as u8);
            }
            M::LocalControl { action } => self.u8(action.code()),
            M::TurnChallenge { challenge } => self.raw(challenge),
            M::TurnAllocateRequest { serial, chap } => {
                self.str(serial);
                self.raw(&chap.challenge);
                self.raw(&chap.response);
                self.str(&chap.peer_serial);
            }
            M::TurnAllocateResponse { relay_port } => self.u16(*relay_port),
            M::TurnAllocationNotice { serial, relay_port } => {
                self.str(serial);
                self.u16(*relay_port);
            }
            M::KeyLookupResponse { serial, plug_key } => {
                self.str(serial);
                match plug_key {
                    Some(k) => {
                        self.u8(1);
                        self.key(k);
                    }
                    None => self.u8(0),
                }
            }
            M::TurnRelayedCommand(relayed) => {
                self.u16(relayed.relay_port);
                self.command(&relayed.command);
                self.raw(&relayed.integrity.0);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: impl Into<String>) -> ParseError {
        ParseError::new(self.pos, reason)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ParseError> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!(
                "need {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], ParseError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8, ParseError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ParseError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, ParseError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    fn bytes(&mut self) -> Result<&'a [u8], ParseError> {
        let len = self.u16()? as usize;
        self.take(len)
    }

    fn str(&mut self) -> Result<String, ParseError> {
        let start = self.pos;
        let raw = self.bytes()?;
        String::from_utf8(raw.to_vec()).map_err(|_| ParseError::new(start, "invalid UTF-8"))
    }

    fn bool(&mut self) -> Result<bool, ParseError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(ParseError::new(
                self.pos - 1,
                format!("invalid boolean {v}"),
            )),
        }
    }

    fn mac(&mut self) -> Result<MacAddr, ParseError> {
        Ok(MacAddr(self.array()?))
    }

    fn key(&mut self) -> Result<SecretKey, ParseError> {
        let at = self.pos;
        let role = KeyRole::from_code(self.u8()?)
            .ok_or_else(|| ParseError::new(at, "invalid key role"))?;
        let len = self.u8()? as usize;
        let raw = self.take(len)?;
        SecretKey::new(role, raw).map_err(|e| ParseError::new(at, e.to_string()))
    }

    fn identity(&mut self) -> Result<DeviceIdentity, ParseError> {
        Ok(DeviceIdentity {
            mac: self.mac()?,
            serial: self.str()?,
            description: self.str()?,
        })
    }

    fn ap(&mut self) -> Result<ApInfo, ParseError> {
        Ok(ApInfo {
            ssid: self.str()?,
            ap_mac: self.mac()?,
        })
    }

    fn auth(&mut self) -> Result<AuthField, ParseError> {
        let serial = self.str()?;
        let timestamp = self.u64()?;
        let nonce: [u8; NONCE_LEN] = self.array()?;
        let at = self.pos;
        let len = self.u8()? as usize;
        let raw = self.take(len)?;
        let digest = if len == DIGEST_LEN {
            AuthDigest::Hmac(raw.try_into().unwrap())
        } else if raw == DUMMY_DIGEST {
            AuthDigest::Dummy
        } else {
            return Err(ParseError::new(
                at,
                format!("invalid authorization digest of {len} bytes"),
            ));
        };
        Ok(AuthField {
            serial,
            timestamp,
            nonce,
            digest,
        })
    }

    fn status(&mut self) -> Result<PlugStatus, ParseError> {
        let v = self.u8()?;
        PlugStatus::from_code(v)
            .ok_or_else(|| ParseError::new(self.pos - 1, format!("invalid status {v}")))
    }

    fn action(&mut self) -> Result<SwitchAction, ParseError> {
        let v = self.u8()?;
        SwitchAction::from_code(v)
            .ok_or_else(|| ParseError::new(self.pos - 1, format!("invalid action {v}")))
    }

    fn command(&mut self) -> Result<ControlCommand, ParseError> {
        Ok(ControlCommand {
            phone_id: self.str()?,
            target_serial: self.str()?,
            action: self.action()?,
            auth: self.auth()?,
        })
    }

    fn message(&mut self, kind: MessageKind) -> Result<ProtocolMessage, ParseError> {
        use MessageKind as K;
        use ProtocolMessage as M;
        Ok(match kind {
            K::PairGetInfoRequest => M::PairGetInfoRequest,
            K::PairGetInfoResponse => M::PairGetInfoResponse {
                plug: self.identity()?,
            },
            K::PairSetupRequest => M::PairSetupRequest {
                phone_id: self.str()?,
                phone_description: self.str()?,
                timestamp: self.u64()?,
                wifi: WifiCredentials {
                    ap: self.ap()?,
                    passphrase: self.str()?,
                },
            },
            K::PairSetupAck => M::PairSetupAck {
                serial: self.str()?,
            },
            K::BindRequest => M::BindRequest(BindRequest {
                plug: self.identity()?,
                phone_id: self.str()?,
                phone_description: self.str()?,
                wifi: self.ap()?,
                timestamp: self.u64()?,
                auth: self.auth()?,
                re_register: self.bool()?,
            }),
            K::BindResponse => match self.u8()? {
                0 => M::BindResponse(BindResponse::TempKeyIssued {
                    temp_key: self.key()?,
                }),
                1 => M::BindResponse(BindResponse::KeysIssued {
                    plug_key: self.key()?,
                    phone_key: self.key()?,
                }),
                v => {
                    return Err(ParseError::new(
                        self.pos - 1,
                        format!("invalid bind response kind {v}"),
                    ))
                }
            },
            K::ErrorReply => {
                let t = self.u8()?;
                let in_reply_to = MessageKind::from_tag(t)
                    .ok_or_else(|| ParseError::new(self.pos - 1, format!("unknown tag {t}")))?;
                let c = self.u8()?;
                let code = ErrorCode::from_code(c).ok_or_else(|| {
                    ParseError::new(self.pos - 1, format!("invalid error code {c}"))
                })?;
                M::ErrorReply { in_reply_to, code }
            }
            K::KeyFetchRequest => M::KeyFetchRequest {
                phone_id: self.str()?,
                serial: self.str()?,
                timestamp: self.u64()?,
                mac: self.array()?,
            },
            K::KeyFetchResponse => M::KeyFetchResponse {
                serial: self.str()?,
                phone_key: self.key()?,
            },
            K::PhoneKeyDelivery => M::PhoneKeyDelivery {
                serial: self.str()?,
                phone_key: self.key()?,
            },
            K::StatusUpdate => M::StatusUpdate {
                serial: self.str()?,
                status: self.status()?,
                auth: self.auth()?,
            },
            K::StatusAck => M::StatusAck {
                serial: self.str()?,
            },
            K::StatusQuery => M::StatusQuery {
                phone_id: self.str()?,
                serial: self.str()?,
                auth: self.auth()?,
            },
            K::StatusReply => M::StatusReply {
                serial: self.str()?,
                status: self.status()?,
            },
            K::ControlCommand => M::ControlCommand(self.command()?),
            K::ControlAck => M::ControlAck {
                serial: self.str()?,
                action: self.action()?,
            },
            K::LocalControl => {
                let v = self.u8()?;
                M::LocalControl {
                    action: LocalAction::from_code(v).ok_or_else(|| {
                        ParseError::new(self.pos - 1, format!("invalid local action {v}"))
                    })?,
                }
            }
            K::LocalControlAck => M::LocalControlAck {
                serial: self.str()?,
                status: self.status()?,
            },
            K::TurnChallengeRequest => M::TurnChallengeRequest {
                serial: self.str()?,
            },
            K::TurnChallenge => M::TurnChallenge {
                challenge: self.array::<CHALLENGE_LEN>()?,
            },
            K::TurnAllocateRequest => M::TurnAllocateRequest {
                serial: self.str()?,
                chap: ChapExchange {
                    challenge: self.array()?,
                    response: self.array()?,
                    peer_serial: self.str()?,
                },
            },
            K::TurnAllocateResponse => M::TurnAllocateResponse {
                relay_port: self.u16()?,
            },
            K::TurnAllocationNotice => M::TurnAllocationNotice {
                serial: self.str()?,
                relay_port: self.u16()?,
            },
            K::TurnRevoke => M::TurnRevoke {
                serial: self.str()?,
            },
            K::KeyLookupRequest => M::KeyLookupRequest {
                serial: self.str()?,
            },
            K::KeyLookupResponse => M::KeyLookupResponse {
                serial: self.str()?,
                plug_key: match self.u8()? {
                    0 => None,
                    1 => Some(self.key()?),
                    v => {
                        return Err(ParseError::new(
                            self.pos - 1,
                            format!("invalid option flag {v}"),
                        ))
                    }
                },
            },
            K::RelayForward => M::RelayForward {
                command: self.command()?,
            },
            K::TurnRelayedCommand => M::TurnRelayedCommand(TurnRelayedCommand {
                relay_port: self.u16()?,
                command: self.command()?,
                integrity: IntegrityAttribute(self.array()?),
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_auth() -> AuthField {
        AuthField {
            serial: "221000000000001".into(),
            timestamp: 1_500_000_000,
            nonce: [1, 2, 3, 4, 5, 6, 7, 8],
            digest: AuthDigest::Hmac([0xab; 20]),
        }
    }

    #[test]
    fn mac_parse_and_display() {
        let mac: MacAddr = "EC:1A:59:01:02:0f".parse().unwrap();
        assert_eq!(mac.to_string(), "ec:1a:59:01:02:0f");
        assert_eq!(mac.oui(), [0xec, 0x1a, 0x59]);
        assert!("ec:1a:59".parse::<MacAddr>().is_err());
        assert!("zz:1a:59:01:02:03".parse::<MacAddr>().is_err());
    }

    #[test]
    fn empty_input_has_no_kind() {
        let err = message_kind(&[]).unwrap_err();
        assert_eq!(err.offset, 0);
        assert!(deserialize(&[]).is_err());
        assert!(message_kind(&[0]).is_err());
    }

    #[test]
    fn truncated_buffer_reports_offset() {
        let bytes = serialize(&ProtocolMessage::StatusUpdate {
            serial: "221000000000001".into(),
            status: PlugStatus::SwitchOn,
            auth: sample_auth(),
        });
        for cut in 1..bytes.len() {
            let err = deserialize(&bytes[..cut]).unwrap_err();
            assert!(err.offset <= cut, "offset {} beyond cut {cut}", err.offset);
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(deserialize(&extra).is_err());
    }

    #[test]
    fn status_codes_on_wire() {
        for status in [
            PlugStatus::SwitchOff,
            PlugStatus::SwitchOn,
            PlugStatus::Unavailable,
        ] {
            let bytes = serialize(&ProtocolMessage::StatusReply {
                serial: "s".into(),
                status,
            });
            assert_eq!(*bytes.last().unwrap(), status as u8);
        }
        let mut bytes = serialize(&ProtocolMessage::StatusReply {
            serial: "s".into(),
            status: PlugStatus::SwitchOn,
        });
        *bytes.last_mut().unwrap() = 2;
        assert!(deserialize(&bytes).is_err());
    }

    #[test]
    fn dummy_digest_is_literal_on_wire() {
        let mut auth = sample_auth();
        auth.digest = AuthDigest::Dummy;
        let bytes = serialize(&ProtocolMessage::StatusQuery {
            phone_id: "p".into(),
            serial: "s".into(),
            auth,
        });
        assert!(bytes.windows(5).any(|w| w == b"dummy"));
    }

    #[test]
    fn redaction_keeps_length() {
        let msg = ProtocolMessage::PairSetupRequest {
            phone_id: "p".into(),
            phone_description: "d".into(),
            timestamp: 1,
            wifi: WifiCredentials {
                ap: ApInfo {
                    ssid: "home".into(),
                    ap_mac: MacAddr([1; 6]),
                },
                passphrase: "hunter22".into(),
            },
        };
        let red = msg.redacted();
        let ProtocolMessage::PairSetupRequest { wifi, .. } = &red else {
            unreachable!()
        };
        assert_eq!(wifi.passphrase, "********");
        assert_eq!(serialize(&red).len(), serialize(&msg).len());
        assert!(!serialize(&red).windows(8).any(|w| w == b"hunter22"));
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in MessageKind::ALL {
            assert_eq!(kind.name().parse::<MessageKind>().unwrap(), *kind);
            assert_eq!(MessageKind::from_tag(kind.tag()), Some(*kind));
        }
    }
}
