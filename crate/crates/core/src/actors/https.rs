use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use rand::Rng;

use super::STALE_AFTER;
use crate::crypto::{self, KeyRole, SecretKey, DEFAULT_AUTH_WINDOW};
use crate::messages::{
    ApInfo, BindRequest, BindResponse, DeviceIdentity, ErrorCode, MessageKind, PlugStatus,
    ProtocolMessage,
};
use crate::simnet::{Actor, Channel, Ctx, Delivery, Destination, NodeId, Peer, BASE_UNIX_TIME};

/// Lifetime of an unused temporary key, in virtual time units.
pub const TEMP_KEY_TTL: u64 = 60;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneRecord {
    pub description: String,
    pub phone_key: SecretKey,
}

/// Server-side association of a plug with its phones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binding {
    pub plug: DeviceIdentity,
    pub plug_key: SecretKey,
    pub phones: BTreeMap<String, PhoneRecord>,
    pub wifi: ApInfo,
    pub last_public_ip: Ipv4Addr,
}

#[derive(Debug, Clone)]
struct TempKey {
    key: SecretKey,
    issued_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct StatusEntry {
    status: PlugStatus,
    at: u64,
}

/// The vendor cloud's HTTPS endpoint: binding, authentication, status, and
/// command relay towards the TURN server.
#[derive(Debug, Clone)]
pub struct HttpsServer {
    patched: bool,
    window: u64,
    turn: Option<NodeId>,
    bindings: BTreeMap<String, Binding>,
    temp_keys: BTreeMap<String, TempKey>,
    statuses: BTreeMap<String, StatusEntry>,
    relay_ports: BTreeMap<String, u16>,
    /// Serials whose plug key was replaced and whose relay must be revoked.
    rotated: Vec<String>,
}

impl HttpsServer {
    pub fn new(patched: bool) -> Self {
        HttpsServer {
            patched,
            window: DEFAULT_AUTH_WINDOW,
            turn: None,
            bindings: BTreeMap::new(),
            temp_keys: BTreeMap::new(),
            statuses: BTreeMap::new(),
            relay_ports: BTreeMap::new(),
            rotated: Vec::new(),
        }
    }

    pub fn set_turn(&mut self, turn: NodeId) {
        self.turn = Some(turn);
    }

    pub fn is_patched(&self) -> bool {
        self.patched
    }

    pub fn binding(&self, serial: &str) -> Option<&Binding> {
        self.bindings.get(serial)
    }

    pub fn bindings(&self) -> &BTreeMap<String, Binding> {
        &self.bindings
    }

    pub fn relay_port(&self, serial: &str) -> Option<u16> {
        self.relay_ports.get(serial).copied()
    }

    /// Status a phone would be told at virtual time `now`.
    pub fn reported_status(&self, serial: &str, now: u64) -> PlugStatus {
        if !self.relay_ports.contains_key(serial) {
            return PlugStatus::Unavailable;
        }
        match self.statuses.get(serial) {
            Some(entry) if now.saturating_sub(entry.at) <= STALE_AFTER => entry.status,
            _ => PlugStatus::Unavailable,
        }
    }

    /// Process a binding request observed from `observed_ip` at virtual
    /// time `now`.
    ///
    /// A dummy authorization is answered with a temporary key. A request
    /// authorized by that temporary key, or by the plug key on record,
    /// receives the plug key and a fresh phone key. An existing binding
    /// keeps its plug key unless the server is patched and a `reRegister`
    /// request arrives from a different public IP than last time, in which
    /// case a new plug key replaces it.
    pub fn handle_bind<R: Rng + ?Sized>(
        &mut self,
        req: &BindRequest,
        observed_ip: Ipv4Addr,
        now: u64,
        rng: &mut R,
    ) -> Result<BindResponse, ErrorCode> {
        let serial = req.plug.serial.clone();
        if req.auth.serial != serial {
            return Err(ErrorCode::BindRejected);
        }
        if req.auth.is_dummy() {
            let key = SecretKey::generate(KeyRole::TempKey, rng);
            self.temp_keys.insert(
                serial,
                TempKey {
                    key: key.clone(),
                    issued_at: now,
                },
            );
            return Ok(BindResponse::TempKeyIssued { temp_key: key });
        }

        let unix_now = BASE_UNIX_TIME + now;
        if let Some(temp) = self.temp_keys.get(&serial) {
            if now.saturating_sub(temp.issued_at) > TEMP_KEY_TTL {
                self.temp_keys.remove(&serial);
            }
        }
        let by_temp = self.temp_keys.get(&serial).is_some_and(|t| {
            crypto::verify_authorization(&t.key, &req.auth, unix_now, self.window).is_accept()
        });
        let by_plug_key = self.bindings.get(&serial).is_some_and(|b| {
            crypto::verify_authorization(&b.plug_key, &req.auth, unix_now, self.window).is_accept()
        });
        if !by_temp && !by_plug_key {
            return Err(ErrorCode::BindRejected);
        }
        if by_temp {
            self.temp_keys.remove(&serial);
        }

        let phone_key = SecretKey::generate(KeyRole::PhoneKey, rng);
        let phone = PhoneRecord {
            description: req.phone_description.clone(),
            phone_key: phone_key.clone(),
        };
        let plug_key = match self.bindings.get_mut(&serial) {
            Some(binding) => {
                if self.patched && req.re_register && observed_ip != binding.last_public_ip {
                    binding.plug_key = SecretKey::generate(KeyRole::PlugKey, rng);
                    self.rotated.push(serial.clone());
                }
                binding.phones.insert(req.phone_id.clone(), phone);
                binding.wifi = req.wifi.clone();
                binding.last_public_ip = observed_ip;
                binding.plug_key.clone()
            }
            None => {
                let plug_key = SecretKey::generate(KeyRole::PlugKey, rng);
                self.bindings.insert(
                    serial,
                    Binding {
                        plug: req.plug.clone(),
                        plug_key: plug_key.clone(),
                        phones: BTreeMap::from([(req.phone_id.clone(), phone)]),
                        wifi: req.wifi.clone(),
                        last_public_ip: observed_ip,
                    },
                );
                plug_key
            }
        };
        Ok(BindResponse::KeysIssued {
            plug_key,
            phone_key,
        })
    }

    fn phone_key(&self, serial: &str, phone_id: &str) -> Option<&SecretKey> {
        Some(&self.bindings.get(serial)?.phones.get(phone_id)?.phone_key)
    }

    fn check_phone(
        &self,
        serial: &str,
        phone_id: &str,
        auth: &crypto::AuthField,
        unix_now: u64,
    ) -> bool {
        auth.serial == serial
            && self.phone_key(serial, phone_id).is_some_and(|k| {
                crypto::verify_authorization(k, auth, unix_now, self.window).is_accept()
            })
    }

    fn handle(&mut self, ctx: &mut Ctx<'_>, d: &Delivery) -> Option<ProtocolMessage> {
        let unix_now = ctx.unix_time();
        let error = |code| {
            Some(ProtocolMessage::ErrorReply {
                in_reply_to: d.msg.kind(),
                code,
            })
        };
        match &d.msg {
            ProtocolMessage::BindRequest(req) => {
                let Peer::Addr(observed) = d.from else {
                    return error(ErrorCode::BadRequest);
                };
                let now = ctx.now();
                let reply = match self.handle_bind(req, *observed.ip(), now, ctx.rng()) {
                    Ok(resp) => Some(ProtocolMessage::BindResponse(resp)),
                    Err(code) => error(code),
                };
                for serial in std::mem::take(&mut self.rotated) {
                    self.relay_ports.remove(&serial);
                    self.statuses.remove(&serial);
                    if let Some(turn) = self.turn {
                        let _ = ctx.send(
                            Destination::Node(turn),
                            ProtocolMessage::TurnRevoke { serial },
                            Channel::ServerInternal,
                        );
                    }
                }
                reply
            }
            ProtocolMessage::KeyFetchRequest {
                phone_id,
                serial,
                timestamp,
                mac,
            } => {
                let expected = crypto::key_fetch_mac(phone_id, serial, *timestamp);
                if !crypto::ct_eq(&expected, mac) || unix_now.abs_diff(*timestamp) > self.window {
                    return error(ErrorCode::AuthRejected);
                }
                match self.phone_key(serial, phone_id) {
                    Some(key) => Some(ProtocolMessage::KeyFetchResponse {
                        serial: serial.clone(),
                        phone_key: key.clone(),
                    }),
                    None => error(ErrorCode::NotBound),
                }
            }
            ProtocolMessage::StatusUpdate {
                serial,
                status,
                auth,
            } => {
                let Some(binding) = self.bindings.get(serial) else {
                    return error(ErrorCode::NotBound);
                };
                let ok = auth.serial == *serial
                    && *status != PlugStatus::Unavailable
                    && crypto::verify_authorization(&binding.plug_key, auth, unix_now, self.window)
                        .is_accept();
                if !ok {
                    return error(ErrorCode::AuthRejected);
                }
                self.statuses.insert(
                    serial.clone(),
                    StatusEntry {
                        status: *status,
                        at: ctx.now(),
                    },
                );
                Some(ProtocolMessage::StatusAck {
                    serial: serial.clone(),
                })
            }
            ProtocolMessage::StatusQuery {
                phone_id,
                serial,
                auth,
            } => {
                if !self.check_phone(serial, phone_id, auth, unix_now) {
                    return error(ErrorCode::AuthRejected);
                }
                Some(ProtocolMessage::StatusReply {
                    serial: serial.clone(),
                    status: self.reported_status(serial, ctx.now()),
                })
            }
            ProtocolMessage::ControlCommand(cmd) => {
                if !self.check_phone(&cmd.target_serial, &cmd.phone_id, &cmd.auth, unix_now) {
                    return error(ErrorCode::AuthRejected);
                }
                let (Some(turn), true) =
                    (self.turn, self.relay_ports.contains_key(&cmd.target_serial))
                else {
                    return error(ErrorCode::Unavailable);
                };
                let forward = ProtocolMessage::RelayForward {
                    command: cmd.clone(),
                };
                if ctx
                    .send(Destination::Node(turn), forward, Channel::ServerInternal)
                    .is_err()
                {
                    return error(ErrorCode::Unavailable);
                }
                Some(ProtocolMessage::ControlAck {
                    serial: cmd.target_serial.clone(),
                    action: cmd.action,
                })
            }
            ProtocolMessage::KeyLookupRequest { serial } => {
                Some(ProtocolMessage::KeyLookupResponse {
                    serial: serial.clone(),
                    plug_key: self.bindings.get(serial).map(|b| b.plug_key.clone()),
                })
            }
            ProtocolMessage::TurnAllocationNotice { serial, relay_port } => {
                self.relay_ports.insert(serial.clone(), *relay_port);
                None
            }
            ProtocolMessage::ErrorReply {
                in_reply_to: MessageKind::RelayForward,
                ..
            } => None,
            _ => None,
        }
    }
}

impl Actor for HttpsServer {
    fn on_message(&mut self, ctx: &mut Ctx<'_>, d: Delivery) {
        if let Some(reply) = self.handle(ctx, &d) {
            let _ = ctx.reply(&d, reply);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::messages::MacAddr;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn request(auth: crypto::AuthField, re_register: bool, phone: &str) -> BindRequest {
        BindRequest {
            plug: plug_identity(),
            phone_id: phone.into(),
            phone_description: "phone".into(),
            wifi: ApInfo {
                ssid: "home".into(),
                ap_mac: MacAddr([9; 6]),
            },
            timestamp: BASE_UNIX_TIME,
            auth,
            re_register,
        }
    }

    fn plug_identity() -> DeviceIdentity {
        DeviceIdentity::genuine(MacAddr([0xec, 0x1a, 0x59, 1, 2, 3]), "plug")
    }

    fn first_bind(
        server: &mut HttpsServer,
        ip: Ipv4Addr,
        rng: &mut ChaCha8Rng,
    ) -> (SecretKey, SecretKey) {
        let dummy = crypto::dummy_authorization(&plug_identity(), BASE_UNIX_TIME);
        let BindResponse::TempKeyIssued { temp_key } = server
            .handle_bind(&request(dummy, false, "alice"), ip, 0, rng)
            .unwrap()
        else {
            panic!("expected temp key")
        };
        let auth =
            crypto::compute_authorization(&temp_key, &plug_identity(), BASE_UNIX_TIME + 2, [1; 8]);
        match server
            .handle_bind(&request(auth, false, "alice"), ip, 2, rng)
            .unwrap()
        {
            BindResponse::KeysIssued {
                plug_key,
                phone_key,
            } => (plug_key, phone_key),
            other => panic!("unexpected {other:?}"),
        }
    }

    const HOME: Ipv4Addr = Ipv4Addr::new(198, 18, 0, 5);
    const ELSEWHERE: Ipv4Addr = Ipv4Addr::new(198, 18, 0, 9);

    #[test]
    fn second_request_with_wrong_temp_key_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut server = HttpsServer::new(false);
        let dummy = crypto::dummy_authorization(&plug_identity(), BASE_UNIX_TIME);
        server
            .handle_bind(&request(dummy, false, "alice"), HOME, 0, &mut rng)
            .unwrap();
        let wrong = SecretKey::generate(KeyRole::TempKey, &mut rng);
        let auth = crypto::compute_authorization(&wrong, &plug_identity(), BASE_UNIX_TIME, [1; 8]);
        assert_eq!(
            server.handle_bind(&request(auth, false, "alice"), HOME, 2, &mut rng),
            Err(ErrorCode::BindRejected)
        );
        assert!(server.binding(&plug_identity().serial).is_none());
    }

    #[test]
    fn temp_key_expires() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut server = HttpsServer::new(false);
        let dummy = crypto::dummy_authorization(&plug_identity(), BASE_UNIX_TIME);
        let BindResponse::TempKeyIssued { temp_key } = server
            .handle_bind(&request(dummy, false, "alice"), HOME, 0, &mut rng)
            .unwrap()
        else {
            panic!()
        };
        let late = TEMP_KEY_TTL + 1;
        let auth = crypto::compute_authorization(
            &temp_key,
            &plug_identity(),
            BASE_UNIX_TIME + late,
            [1; 8],
        );
        assert_eq!(
            server.handle_bind(&request(auth, false, "alice"), HOME, late, &mut rng),
            Err(ErrorCode::BindRejected)
        );
    }

    #[test]
    fn temp_key_is_single_use() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut server = HttpsServer::new(false);
        let dummy = crypto::dummy_authorization(&plug_identity(), BASE_UNIX_TIME);
        let BindResponse::TempKeyIssued { temp_key } = server
            .handle_bind(&request(dummy, false, "alice"), HOME, 0, &mut rng)
            .unwrap()
        else {
            panic!()
        };
        let auth =
            crypto::compute_authorization(&temp_key, &plug_identity(), BASE_UNIX_TIME, [1; 8]);
        assert!(server
            .handle_bind(&request(auth.clone(), false, "alice"), HOME, 1, &mut rng)
            .is_ok());
        assert_eq!(
            server.handle_bind(&request(auth, false, "alice"), HOME, 2, &mut rng),
            Err(ErrorCode::BindRejected)
        );
    }

    #[test]
    fn unpatched_rebind_returns_original_plug_key() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut server = HttpsServer::new(false);
        let (plug_key, alice_key) = first_bind(&mut server, HOME, &mut rng);
        let auth =
            crypto::compute_authorization(&plug_key, &plug_identity(), BASE_UNIX_TIME + 5, [2; 8]);
        let BindResponse::KeysIssued {
            plug_key: again,
            phone_key,
        } = server
            .handle_bind(&request(auth, true, "bob"), ELSEWHERE, 5, &mut rng)
            .unwrap()
        else {
            panic!()
        };
        assert_eq!(again, plug_key);
        assert_ne!(phone_key, alice_key);
        let binding = server.binding(&plug_identity().serial).unwrap();
        assert_eq!(binding.phones.len(), 2);
    }

    #[test]
    fn patched_rebind_same_ip_keeps_key() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut server = HttpsServer::new(true);
        let (plug_key, _) = first_bind(&mut server, HOME, &mut rng);
        let auth =
            crypto::compute_authorization(&plug_key, &plug_identity(), BASE_UNIX_TIME + 5, [2; 8]);
        let BindResponse::KeysIssued {
            plug_key: again, ..
        } = server
            .handle_bind(&request(auth, true, "bob"), HOME, 5, &mut rng)
            .unwrap()
        else {
            panic!()
        };
        assert_eq!(again, plug_key);
    }

    #[test]
    fn patched_rebind_changed_ip_rotates_key() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut server = HttpsServer::new(true);
        let (plug_key, _) = first_bind(&mut server, HOME, &mut rng);
        let auth =
            crypto::compute_authorization(&plug_key, &plug_identity(), BASE_UNIX_TIME + 5, [2; 8]);
        let BindResponse::KeysIssued {
            plug_key: fresh, ..
        } = server
            .handle_bind(&request(auth.clone(), true, "bob"), ELSEWHERE, 5, &mut rng)
            .unwrap()
        else {
            panic!()
        };
        assert_ne!(fresh, plug_key);
        assert_eq!(
            server.binding(&plug_identity().serial).unwrap().plug_key,
            fresh
        );
        // The retained original key no longer authorizes anything.
        let retry =
            crypto::compute_authorization(&plug_key, &plug_identity(), BASE_UNIX_TIME + 6, [3; 8]);
        assert_eq!(
            server.handle_bind(&request(retry, true, "alice"), HOME, 6, &mut rng),
            Err(ErrorCode::BindRejected)
        );
    }

    #[test]
    fn status_goes_unavailable_when_stale_or_unallocated() {
        let mut server = HttpsServer::new(false);
        let serial = plug_identity().serial;
        assert_eq!(server.reported_status(&serial, 0), PlugStatus::Unavailable);
        server.relay_ports.insert(serial.clone(), 50000);
        server.statuses.insert(
            serial.clone(),
            StatusEntry {
                status: PlugStatus::SwitchOn,
                at: 100,
            },
        );
        assert_eq!(
            server.reported_status(&serial, 100 + STALE_AFTER),
            PlugStatus::SwitchOn
        );
        assert_eq!(
            server.reported_status(&serial, 101 + STALE_AFTER),
            PlugStatus::Unavailable
        );
    }
}
