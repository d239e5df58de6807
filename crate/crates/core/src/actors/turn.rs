use std::collections::BTreeMap;
use std::net::SocketAddrV4;

use crate::crypto::{self, Challenge, ChapExchange, SecretKey};
use crate::messages::{ErrorCode, MessageKind, ProtocolMessage, TurnRelayedCommand};
use crate::simnet::{Actor, Channel, Ctx, Delivery, Destination, NodeId, Peer};

const FIRST_RELAY_PORT: u16 = 50000;

/// A relay allocation. The most recent successful allocation for a serial
/// replaces any earlier one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub relay_port: u16,
    pub holder: SocketAddrV4,
    pub key: SecretKey,
}

#[derive(Debug, Clone)]
struct PendingAllocation {
    from: SocketAddrV4,
    chap: ChapExchange,
}

/// NAT-traversal relay. Authenticates plugs by CHAP under the plug key it
/// looks up from the HTTPS server, and forwards commands to whoever holds
/// the current allocation.
#[derive(Debug, Clone)]
pub struct TurnServer {
    https: NodeId,
    challenges: BTreeMap<SocketAddrV4, (String, Challenge)>,
    pending: BTreeMap<String, Vec<PendingAllocation>>,
    allocations: BTreeMap<String, Allocation>,
    next_port: u16,
    /// (serial, holder, trace seq of the forwarded command delivery).
    relayed: Vec<(String, SocketAddrV4, u64)>,
}

impl TurnServer {
    pub fn new(https: NodeId) -> Self {
        TurnServer {
            https,
            challenges: BTreeMap::new(),
            pending: BTreeMap::new(),
            allocations: BTreeMap::new(),
            next_port: FIRST_RELAY_PORT,
            relayed: Vec::new(),
        }
    }

    pub fn allocation(&self, serial: &str) -> Option<&Allocation> {
        self.allocations.get(serial)
    }

    pub fn allocations(&self) -> &BTreeMap<String, Allocation> {
        &self.allocations
    }

    /// Commands relayed so far, as `(serial, holder, forward seq)`.
    pub fn relayed(&self) -> &[(String, SocketAddrV4, u64)] {
        &self.relayed
    }

    fn deny(ctx: &mut Ctx<'_>, to: SocketAddrV4) {
        let msg = ProtocolMessage::ErrorReply {
            in_reply_to: MessageKind::TurnAllocateRequest,
            code: ErrorCode::AllocationDenied,
        };
        let _ = ctx.send(Destination::Addr(to), msg, Channel::Internet);
    }

    fn finish_allocations(&mut self, ctx: &mut Ctx<'_>, serial: &str, key: Option<SecretKey>) {
        for pending in self.pending.remove(serial).unwrap_or_default() {
            let verdict = key
                .as_ref()
                .and_then(|k| crypto::chap_verify(k, &pending.chap).ok());
            if !verdict.is_some_and(|v| v.is_accept()) {
                Self::deny(ctx, pending.from);
                continue;
            }
            let relay_port = self.next_port;
            self.next_port = self.next_port.wrapping_add(1).max(FIRST_RELAY_PORT);
            self.allocations.insert(
                serial.to_string(),
                Allocation {
                    relay_port,
                    holder: pending.from,
                    key: key.clone().expect("verified key"),
                },
            );
            let _ = ctx.send(
                Destination::Addr(pending.from),
                ProtocolMessage::TurnAllocateResponse { relay_port },
                Channel::Internet,
            );
            let _ = ctx.send(
                Destination::Node(self.https),
                ProtocolMessage::TurnAllocationNotice {
                    serial: serial.to_string(),
                    relay_port,
                },
                Channel::ServerInternal,
            );
        }
    }
}

impl Actor for TurnServer {
    fn on_message(&mut self, ctx: &mut Ctx<'_>, d: Delivery) {
        match (&d.msg, d.from) {
            (ProtocolMessage::TurnChallengeRequest { serial }, Peer::Addr(from)) => {
                let challenge = crypto::random_challenge(ctx.rng());
                self.challenges.insert(from, (serial.clone(), challenge));
                let _ = ctx.reply(&d, ProtocolMessage::TurnChallenge { challenge });
            }
            (ProtocolMessage::TurnAllocateRequest { serial, chap }, Peer::Addr(from)) => {
                let issued = self.challenges.remove(&from);
                let matches = issued.is_some_and(|(s, c)| s == *serial && c == chap.challenge)
                    && chap.peer_serial == *serial;
                if !matches {
                    Self::deny(ctx, from);
                    return;
                }
                let waiting = self.pending.entry(serial.clone()).or_default();
                waiting.push(PendingAllocation {
                    from,
                    chap: chap.clone(),
                });
                if waiting.len() == 1 {
                    let _ = ctx.send(
                        Destination::Node(self.https),
                        ProtocolMessage::KeyLookupRequest {
                            serial: serial.clone(),
                        },
                        Channel::ServerInternal,
                    );
                }
            }
            (ProtocolMessage::KeyLookupResponse { serial, plug_key }, Peer::Node(_)) => {
                self.finish_allocations(ctx, serial, plug_key.clone());
            }
            (ProtocolMessage::RelayForward { command }, Peer::Node(_)) => {
                match self.allocations.get(&command.target_serial) {
                    Some(alloc) => {
                        let relayed =
                            TurnRelayedCommand::seal(alloc.relay_port, command.clone(), &alloc.key);
                        let holder = alloc.holder;
                        let _ = ctx.send(
                            Destination::Addr(holder),
                            ProtocolMessage::TurnRelayedCommand(relayed),
                            Channel::Internet,
                        );
                        self.relayed
                            .push((command.target_serial.clone(), holder, d.seq));
                    }
                    None => {
                        let _ = ctx.reply(
                            &d,
                            ProtocolMessage::ErrorReply {
                                in_reply_to: MessageKind::RelayForward,
                                code: ErrorCode::Unavailable,
                            },
                        );
                    }
                }
            }
            (ProtocolMessage::TurnRevoke { serial }, Peer::Node(_)) => {
                self.allocations.remove(serial);
            }
            _ => {}
        }
    }
}
