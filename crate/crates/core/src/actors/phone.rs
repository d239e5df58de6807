use std::net::SocketAddrV4;

use thiserror::Error;

use super::ReceivedError;
use crate::crypto::{self, AuthField, SecretKey};
use crate::messages::{
    ControlCommand, DeviceIdentity, LocalAction, PlugStatus, ProtocolMessage, SwitchAction,
    WifiCredentials,
};
use crate::simnet::{Actor, Channel, Ctx, Delivery, Destination, NetError, NodeId};

#[derive(Debug, Error)]
pub enum PhoneError {
    #[error("channel error: {0}")]
    Channel(String),
    #[error("no plug known to this phone")]
    NoPlug,
    #[error("no home network configured")]
    NoWifi,
    #[error(transparent)]
    Net(#[from] NetError),
}

/// The vendor's smartphone app.
#[derive(Debug, Clone)]
pub struct Smartphone {
    phone_id: String,
    description: String,
    phone_key: Option<SecretKey>,
    /// Trace seq of the record that delivered the current key.
    key_seq: Option<u64>,
    known_plug: Option<DeviceIdentity>,
    home_wifi: Option<WifiCredentials>,
    https: SocketAddrV4,
    statuses: Vec<(u64, PlugStatus)>,
    control_acks: Vec<(u64, SwitchAction)>,
    local_acks: Vec<(u64, PlugStatus)>,
    errors: Vec<ReceivedError>,
}

impl Smartphone {
    pub fn new(
        phone_id: impl Into<String>,
        description: impl Into<String>,
        https: SocketAddrV4,
    ) -> Self {
        Smartphone {
            phone_id: phone_id.into(),
            description: description.into(),
            phone_key: None,
            key_seq: None,
            known_plug: None,
            home_wifi: None,
            https,
            statuses: Vec::new(),
            control_acks: Vec::new(),
            local_acks: Vec::new(),
            errors: Vec::new(),
        }
    }

    pub fn with_home_wifi(mut self, wifi: WifiCredentials) -> Self {
        self.home_wifi = Some(wifi);
        self
    }

    /// Point the app at a plug without pairing (e.g. after a remote key fetch).
    pub fn with_known_plug(mut self, plug: DeviceIdentity) -> Self {
        self.known_plug = Some(plug);
        self
    }

    pub fn phone_id(&self) -> &str {
        &self.phone_id
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn phone_key(&self) -> Option<&SecretKey> {
        self.phone_key.as_ref()
    }

    pub fn key_seq(&self) -> Option<u64> {
        self.key_seq
    }

    pub fn known_plug(&self) -> Option<&DeviceIdentity> {
        self.known_plug.as_ref()
    }

    pub fn statuses(&self) -> &[(u64, PlugStatus)] {
        &self.statuses
    }

    pub fn last_status(&self) -> Option<PlugStatus> {
        self.statuses.last().map(|(_, s)| *s)
    }

    pub fn control_acks(&self) -> &[(u64, SwitchAction)] {
        &self.control_acks
    }

    pub fn local_acks(&self) -> &[(u64, PlugStatus)] {
        &self.local_acks
    }

    pub fn errors(&self) -> &[ReceivedError] {
        &self.errors
    }

    /// Start pairing with a plug whose soft AP this phone has joined.
    pub fn pair(&mut self, ctx: &mut Ctx<'_>, plug: NodeId) -> Result<(), PhoneError> {
        if self.home_wifi.is_none() {
            return Err(PhoneError::NoWifi);
        }
        if !ctx.shares_lan_with(plug) {
            return Err(PhoneError::Channel(
                "pairing needs the plug's local access point".into(),
            ));
        }
        ctx.send(
            Destination::Node(plug),
            ProtocolMessage::PairGetInfoRequest,
            Channel::LocalAp,
        )?;
        Ok(())
    }

    fn plug(&self) -> Result<&DeviceIdentity, PhoneError> {
        self.known_plug.as_ref().ok_or(PhoneError::NoPlug)
    }

    /// Authorization for a request about `serial`. A phone without a key
    /// can only offer the dummy placeholder.
    fn authorize(&self, ctx: &mut Ctx<'_>, serial: &str) -> AuthField {
        let now = ctx.unix_time();
        match &self.phone_key {
            Some(key) => {
                crypto::authorize_serial(key, serial, now, crypto::random_nonce(ctx.rng()))
            }
            None => {
                let plug = self
                    .known_plug
                    .clone()
                    .expect("callers check for a known plug");
                crypto::dummy_authorization(&plug, now)
            }
        }
    }

    pub fn fetch_key_remote(&mut self, ctx: &mut Ctx<'_>) -> Result<(), PhoneError> {
        let serial = self.plug()?.serial.clone();
        let timestamp = ctx.unix_time();
        let msg = ProtocolMessage::KeyFetchRequest {
            mac: crypto::key_fetch_mac(&self.phone_id, &serial, timestamp),
            phone_id: self.phone_id.clone(),
            serial,
            timestamp,
        };
        ctx.send(Destination::Addr(self.https), msg, Channel::Internet)?;
        Ok(())
    }

    pub fn query_status(&mut self, ctx: &mut Ctx<'_>) -> Result<(), PhoneError> {
        let serial = self.plug()?.serial.clone();
        let auth = self.authorize(ctx, &serial);
        let msg = ProtocolMessage::StatusQuery {
            phone_id: self.phone_id.clone(),
            serial,
            auth,
        };
        ctx.send(Destination::Addr(self.https), msg, Channel::Internet)?;
        Ok(())
    }

    /// Remote switch command through the HTTPS server.
    pub fn control(&mut self, ctx: &mut Ctx<'_>, action: SwitchAction) -> Result<(), PhoneError> {
        let serial = self.plug()?.serial.clone();
        let auth = self.authorize(ctx, &serial);
        let cmd = ControlCommand {
            phone_id: self.phone_id.clone(),
            target_serial: serial,
            action,
            auth,
        };
        ctx.send(
            Destination::Addr(self.https),
            ProtocolMessage::ControlCommand(cmd),
            Channel::Internet,
        )?;
        Ok(())
    }

    /// Switch a plug on the same LAN directly. No key is involved.
    pub fn control_local(
        &mut self,
        ctx: &mut Ctx<'_>,
        plug: NodeId,
        action: LocalAction,
    ) -> Result<(), PhoneError> {
        if !ctx.shares_lan_with(plug) {
            return Err(PhoneError::Channel(
                "plug is not on this phone's LAN".into(),
            ));
        }
        ctx.send(
            Destination::Node(plug),
            ProtocolMessage::LocalControl { action },
            Channel::LocalAp,
        )?;
        Ok(())
    }
}

impl Actor for Smartphone {
    fn on_message(&mut self, ctx: &mut Ctx<'_>, d: Delivery) {
        match d.msg.clone() {
            ProtocolMessage::PairGetInfoResponse { plug } if d.channel == Channel::LocalAp => {
                let Some(wifi) = self.home_wifi.clone() else {
                    return;
                };
                self.known_plug = Some(plug);
                let msg = ProtocolMessage::PairSetupRequest {
                    phone_id: self.phone_id.clone(),
                    phone_description: self.description.clone(),
                    timestamp: ctx.unix_time(),
                    wifi,
                };
                let _ = ctx.reply(&d, msg);
            }
            ProtocolMessage::PairSetupAck { .. } => {
                if let Some(wifi) = &self.home_wifi {
                    let ssid = wifi.ap.ssid.clone();
                    ctx.leave_lans();
                    let _ = ctx.associate(&ssid);
                }
            }
            ProtocolMessage::PhoneKeyDelivery { serial, phone_key }
                if d.channel == Channel::LocalAp =>
            {
                if self.known_plug.as_ref().is_some_and(|p| p.serial == serial) {
                    self.phone_key = Some(phone_key);
                    self.key_seq = Some(d.seq);
                }
            }
            ProtocolMessage::KeyFetchResponse { serial, phone_key } => {
                if self.known_plug.as_ref().is_some_and(|p| p.serial == serial) {
                    self.phone_key = Some(phone_key);
                    self.key_seq = Some(d.seq);
                }
            }
            ProtocolMessage::StatusReply { status, .. } => self.statuses.push((d.seq, status)),
            ProtocolMessage::ControlAck { action, .. } => self.control_acks.push((d.seq, action)),
            ProtocolMessage::LocalControlAck { status, .. } => {
                self.local_acks.push((d.seq, status))
            }
            ProtocolMessage::ErrorReply { in_reply_to, code } => self.errors.push(ReceivedError {
                seq: d.seq,
                in_reply_to,
                code,
            }),
            _ => {}
        }
    }
}
