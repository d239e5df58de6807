use std::net::SocketAddrV4;

use thiserror::Error;

use super::ReceivedError;
use crate::crypto::{self, SecretKey};
use crate::messages::{
    BindRequest, BindResponse, DeviceIdentity, ErrorCode, LocalAction, PlugStatus, ProtocolMessage,
    SwitchAction, WifiCredentials,
};
use crate::simnet::{Actor, ApId, Channel, Ctx, Delivery, Destination, NetError, NodeId, Peer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlugPhase {
    Factory,
    ApMode,
    Paired,
    Bound,
    Online,
}

#[derive(Debug, Error)]
pub enum PlugError {
    #[error("operation not valid in phase {0:?}")]
    Phase(PlugPhase),
    #[error("plug holds no plug key")]
    NoKey,
    #[error(transparent)]
    Net(#[from] NetError),
}

/// What the phone handed over during pairing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingInfo {
    pub phone_node: NodeId,
    pub phone_id: String,
    pub phone_description: String,
    pub timestamp: u64,
    pub wifi: WifiCredentials,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlugStats {
    /// Relayed commands that passed MESSAGE-INTEGRITY and were applied,
    /// with the trace seq of each delivery.
    pub relayed_commands: Vec<u64>,
    pub rejected_relays: u32,
    pub local_commands: u32,
    pub status_acks: u32,
    pub bind_requests_sent: u32,
}

/// A genuine WeMo-style plug.
#[derive(Debug, Clone)]
pub struct SmartPlug {
    identity: DeviceIdentity,
    phase: PlugPhase,
    plug_key: Option<SecretKey>,
    stored_phone_key: Option<SecretKey>,
    switch: SwitchAction,
    pairing: Option<PairingInfo>,
    temp_key: Option<SecretKey>,
    relay_port: Option<u16>,
    https: SocketAddrV4,
    turn: SocketAddrV4,
    errors: Vec<ReceivedError>,
    stats: PlugStats,
}

impl SmartPlug {
    pub fn new(identity: DeviceIdentity, https: SocketAddrV4, turn: SocketAddrV4) -> Self {
        SmartPlug {
            identity,
            phase: PlugPhase::Factory,
            plug_key: None,
            stored_phone_key: None,
            switch: SwitchAction::Off,
            pairing: None,
            temp_key: None,
            relay_port: None,
            https,
            turn,
            errors: Vec::new(),
            stats: PlugStats::default(),
        }
    }

    pub fn identity(&self) -> &DeviceIdentity {
        &self.identity
    }

    pub fn phase(&self) -> PlugPhase {
        self.phase
    }

    pub fn plug_key(&self) -> Option<&SecretKey> {
        self.plug_key.as_ref()
    }

    pub fn stored_phone_key(&self) -> Option<&SecretKey> {
        self.stored_phone_key.as_ref()
    }

    pub fn switch(&self) -> SwitchAction {
        self.switch
    }

    pub fn pairing(&self) -> Option<&PairingInfo> {
        self.pairing.as_ref()
    }

    pub fn relay_port(&self) -> Option<u16> {
        self.relay_port
    }

    pub fn errors(&self) -> &[ReceivedError] {
        &self.errors
    }

    pub fn stats(&self) -> &PlugStats {
        &self.stats
    }

    /// Software name of the soft AP the plug opens for pairing.
    pub fn soft_ap_ssid(&self) -> String {
        let mac = self.identity.mac.octets();
        format!("WeMo.Switch.{:02X}{:02X}", mac[4], mac[5])
    }

    pub fn enter_ap_mode(&mut self, ctx: &mut Ctx<'_>) -> Result<ApId, PlugError> {
        if self.phase != PlugPhase::Factory {
            return Err(PlugError::Phase(self.phase));
        }
        ctx.leave_lans();
        let ap = ctx.open_soft_ap(&self.soft_ap_ssid());
        self.phase = PlugPhase::ApMode;
        Ok(ap)
    }

    /// Reset button: forget pairing and network state. The plug key stays.
    pub fn reset(&mut self, ctx: &mut Ctx<'_>) {
        ctx.close_soft_aps();
        ctx.leave_lans();
        self.phase = PlugPhase::Factory;
        self.pairing = None;
        self.stored_phone_key = None;
        self.temp_key = None;
        self.relay_port = None;
    }

    /// Begin binding. With no plug key this is the two-step first bind
    /// opened by a dummy authorization; with a retained key it is a single
    /// rebinding request flagged `reRegister`.
    pub fn start_bind(&mut self, ctx: &mut Ctx<'_>) -> Result<(), PlugError> {
        if self.phase != PlugPhase::Paired {
            return Err(PlugError::Phase(self.phase));
        }
        let now = ctx.unix_time();
        let (auth, re_register) = match &self.plug_key {
            Some(key) => (
                crypto::compute_authorization(
                    key,
                    &self.identity,
                    now,
                    crypto::random_nonce(ctx.rng()),
                ),
                true,
            ),
            None => (crypto::dummy_authorization(&self.identity, now), false),
        };
        self.send_bind(ctx, auth, re_register)
    }

    fn send_bind(
        &mut self,
        ctx: &mut Ctx<'_>,
        auth: crypto::AuthField,
        re_register: bool,
    ) -> Result<(), PlugError> {
        let pairing = self.pairing.as_ref().ok_or(PlugError::Phase(self.phase))?;
        let req = BindRequest {
            plug: self.identity.clone(),
            phone_id: pairing.phone_id.clone(),
            phone_description: pairing.phone_description.clone(),
            wifi: pairing.wifi.ap.clone(),
            timestamp: ctx.unix_time(),
            auth,
            re_register,
        };
        ctx.send(
            Destination::Addr(self.https),
            ProtocolMessage::BindRequest(req),
            Channel::Internet,
        )?;
        self.stats.bind_requests_sent += 1;
        Ok(())
    }

    /// Push the current switch state to the HTTPS server.
    pub fn sync_status(&mut self, ctx: &mut Ctx<'_>) -> Result<(), PlugError> {
        let key = self.plug_key.as_ref().ok_or(PlugError::NoKey)?;
        let auth = crypto::compute_authorization(
            key,
            &self.identity,
            ctx.unix_time(),
            crypto::random_nonce(ctx.rng()),
        );
        let msg = ProtocolMessage::StatusUpdate {
            serial: self.identity.serial.clone(),
            status: self.switch.resulting_status(),
            auth,
        };
        ctx.send(Destination::Addr(self.https), msg, Channel::Internet)?;
        Ok(())
    }

    /// Ask the TURN server for a relay allocation (CHAP follows).
    pub fn request_relay(&mut self, ctx: &mut Ctx<'_>) -> Result<(), PlugError> {
        if self.plug_key.is_none() {
            return Err(PlugError::NoKey);
        }
        let msg = ProtocolMessage::TurnChallengeRequest {
            serial: self.identity.serial.clone(),
        };
        ctx.send(Destination::Addr(self.turn), msg, Channel::Internet)?;
        Ok(())
    }

    fn apply(&mut self, action: SwitchAction) {
        self.switch = action;
    }

    fn status(&self) -> PlugStatus {
        self.switch.resulting_status()
    }

    fn on_keys(&mut self, ctx: &mut Ctx<'_>, plug_key: SecretKey, phone_key: SecretKey) {
        self.temp_key = None;
        self.plug_key = Some(plug_key);
        self.stored_phone_key = Some(phone_key.clone());
        self.phase = PlugPhase::Bound;
        if let Some(pairing) = &self.pairing {
            if ctx.shares_lan_with(pairing.phone_node) {
                let msg = ProtocolMessage::PhoneKeyDelivery {
                    serial: self.identity.serial.clone(),
                    phone_key,
                };
                let _ = ctx.send(Destination::Node(pairing.phone_node), msg, Channel::LocalAp);
            }
        }
        let _ = self.request_relay(ctx);
    }
}

impl Actor for SmartPlug {
    fn on_message(&mut self, ctx: &mut Ctx<'_>, d: Delivery) {
        let local = d.channel == Channel::LocalAp;
        match d.msg.clone() {
            ProtocolMessage::PairGetInfoRequest | ProtocolMessage::PairSetupRequest { .. }
                if !local =>
            {
                let _ = ctx.reply(
                    &d,
                    ProtocolMessage::ErrorReply {
                        in_reply_to: d.msg.kind(),
                        code: ErrorCode::WrongChannel,
                    },
                );
            }
            ProtocolMessage::PairGetInfoRequest => {
                if self.phase == PlugPhase::ApMode {
                    let _ = ctx.reply(
                        &d,
                        ProtocolMessage::PairGetInfoResponse {
                            plug: self.identity.clone(),
                        },
                    );
                }
            }
            ProtocolMessage::PairSetupRequest {
                phone_id,
                phone_description,
                timestamp,
                wifi,
            } => {
                let Peer::Node(phone_node) = d.from else {
                    return;
                };
                if self.phase != PlugPhase::ApMode || timestamp == 0 {
                    return;
                }
                let ssid = wifi.ap.ssid.clone();
                self.pairing = Some(PairingInfo {
                    phone_node,
                    phone_id,
                    phone_description,
                    timestamp,
                    wifi,
                });
                let _ = ctx.reply(
                    &d,
                    ProtocolMessage::PairSetupAck {
                        serial: self.identity.serial.clone(),
                    },
                );
                ctx.close_soft_aps();
                ctx.leave_lans();
                if ctx.associate(&ssid).is_ok() {
                    self.phase = PlugPhase::Paired;
                }
            }
            ProtocolMessage::BindResponse(BindResponse::TempKeyIssued { temp_key }) => {
                let auth = crypto::compute_authorization(
                    &temp_key,
                    &self.identity,
                    ctx.unix_time(),
                    crypto::random_nonce(ctx.rng()),
                );
                self.temp_key = Some(temp_key);
                // The second request keeps the first one's reRegister flag.
                let re_register = self.plug_key.is_some();
                let _ = self.send_bind(ctx, auth, re_register);
            }
            ProtocolMessage::BindResponse(BindResponse::KeysIssued {
                plug_key,
                phone_key,
            }) => {
                self.on_keys(ctx, plug_key, phone_key);
            }
            ProtocolMessage::TurnChallenge { challenge } => {
                let Some(key) = &self.plug_key else { return };
                if let Ok(chap) = crypto::chap_respond(key, challenge, &self.identity) {
                    let msg = ProtocolMessage::TurnAllocateRequest {
                        serial: self.identity.serial.clone(),
                        chap,
                    };
                    let _ = ctx.send(Destination::Addr(self.turn), msg, Channel::Internet);
                }
            }
            ProtocolMessage::TurnAllocateResponse { relay_port } => {
                self.relay_port = Some(relay_port);
                self.phase = PlugPhase::Online;
                let _ = self.sync_status(ctx);
            }
            ProtocolMessage::StatusAck { .. } => self.stats.status_acks += 1,
            ProtocolMessage::ErrorReply { in_reply_to, code } => {
                self.errors.push(ReceivedError {
                    seq: d.seq,
                    in_reply_to,
                    code,
                });
                if code == ErrorCode::AllocationDenied {
                    self.relay_port = None;
                }
            }
            ProtocolMessage::TurnRelayedCommand(relayed) => {
                let accepted = self
                    .plug_key
                    .as_ref()
                    .is_some_and(|k| relayed.verify(k).is_accept())
                    && relayed.command.target_serial == self.identity.serial;
                if accepted {
                    self.apply(relayed.command.action);
                    self.stats.relayed_commands.push(d.seq);
                    let _ = self.sync_status(ctx);
                } else {
                    self.stats.rejected_relays += 1;
                }
            }
            ProtocolMessage::LocalControl { action } if local => {
                // No authentication on the LAN path.
                let next = match action {
                    LocalAction::Set(a) => a,
                    LocalAction::Toggle => self.switch.opposite(),
                };
                self.apply(next);
                self.stats.local_commands += 1;
                let _ = ctx.reply(
                    &d,
                    ProtocolMessage::LocalControlAck {
                        serial: self.identity.serial.clone(),
                        status: self.status(),
                    },
                );
                if self.plug_key.is_some() && self.phase == PlugPhase::Online {
                    let _ = self.sync_status(ctx);
                }
            }
            _ => {}
        }
    }
}
