//! Protocol state machines: the smart plug, the smartphone app, the HTTPS
//! server, and the TURN relay. Actors only ever run inside the simulation
//! loop; scenario code drives them through [`crate::simnet::Sim::invoke`].

mod https;
mod phone;
mod plug;
mod turn;

pub use https::{Binding, HttpsServer, PhoneRecord, TEMP_KEY_TTL};
pub use phone::{PhoneError, Smartphone};
pub use plug::{PairingInfo, PlugError, PlugPhase, PlugStats, SmartPlug};
pub use turn::{Allocation, TurnServer};

use crate::messages::{ErrorCode, MessageKind};

/// Status sync period of a plug, in virtual time units.
pub const SYNC_PERIOD: u64 = 10;
/// A plug that has not synced for this long is reported unavailable.
pub const STALE_AFTER: u64 = 2 * SYNC_PERIOD;
/// Port the HTTPS server listens on.
pub const HTTPS_PORT: u16 = 443;
/// Port the TURN server listens on.
pub const TURN_PORT: u16 = 3478;

/// An error reply an actor received, with the trace seq it arrived in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReceivedError {
    pub seq: u64,
    pub in_reply_to: MessageKind,
    pub code: ErrorCode,
}
