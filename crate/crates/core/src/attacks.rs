//! Attacker model: wardriving for vendor devices, a software fake plug and
//! fake phone on the attacker's own network, and the drivers for the
//! sharing and connection-hijacking attacks.

use std::net::SocketAddrV4;

use serde::{Deserialize, Serialize};

use crate::actors::{ReceivedError, SmartPlug, Smartphone};
use crate::crypto::{self, SecretKey};
use crate::messages::{
    ApInfo, BindRequest, BindResponse, DeviceIdentity, ErrorCode, MacAddr, MessageKind,
    ProtocolMessage, SwitchAction,
};
use crate::simnet::{Actor, ApId, Attachment, Channel, Ctx, Delivery, Destination, NodeId, Sim};
use crate::testbed::{Result, Testbed};

/// Phone identity the attacker invents for the rebinding request.
pub const FAKE_PHONE_ID: &str = "phone-0666";
pub const ATTACKER_SSID: &str = "attacker-net";

/// What the attacker knows about one victim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackerKnowledge {
    pub victim_mac: MacAddr,
    pub victim_serial: String,
    pub ap_ssid: String,
    pub ap_mac: MacAddr,
    pub stolen_plug_key: Option<SecretKey>,
    pub attacker_phone_key: Option<SecretKey>,
}

impl AttackerKnowledge {
    /// Knowledge from the four facts observable or derivable without any
    /// secret. The serial is derived from the MAC.
    pub fn from_public(victim_mac: MacAddr, ap_ssid: impl Into<String>, ap_mac: MacAddr) -> Self {
        AttackerKnowledge {
            victim_mac,
            victim_serial: crypto::derive_serial(victim_mac),
            ap_ssid: ap_ssid.into(),
            ap_mac,
            stolen_plug_key: None,
            attacker_phone_key: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeKind {
    AttackerControls,
    VictimDoS,
    Failed,
}

/// Result of an attack, with the trace records that demonstrate it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub kind: OutcomeKind,
    pub evidence: Vec<u64>,
}

impl AttackOutcome {
    fn failed(evidence: Vec<u64>) -> Self {
        AttackOutcome {
            kind: OutcomeKind::Failed,
            evidence,
        }
    }

    /// Every evidence seq names a delivered record in `sim`'s trace.
    pub fn evidence_in_trace(&self, sim: &Sim) -> bool {
        self.evidence
            .iter()
            .all(|seq| sim.record(*seq).is_some_and(|r| r.is_delivery()))
    }
}

/// Passive survey of the given access points. Reports every station whose
/// MAC falls in the vendor OUI block, together with its home AP.
pub fn wardrive(sim: &Sim, region: &[ApId], vendor_oui: [u8; 3]) -> Vec<AttackerKnowledge> {
    let mut found = Vec::new();
    for ap in region {
        let Ok(survey) = sim.survey(*ap) else {
            continue;
        };
        if !survey.is_router {
            continue;
        }
        for station in survey.stations.iter().filter(|m| m.oui() == vendor_oui) {
            found.push(AttackerKnowledge::from_public(
                *station,
                survey.ssid.clone(),
                survey.ap_mac,
            ));
        }
    }
    found
}

/// Software plug that claims the victim's identity.
#[derive(Debug, Clone)]
pub struct FakePlug {
    identity: DeviceIdentity,
    ap: ApInfo,
    phone_node: NodeId,
    https: SocketAddrV4,
    turn: SocketAddrV4,
    plug_key: Option<SecretKey>,
    phone_key: Option<SecretKey>,
    keys_seq: Option<u64>,
    relay_port: Option<u16>,
    allocation_seq: Option<u64>,
    /// Relayed commands that verified under the held key.
    hijacked: Vec<(u64, SwitchAction)>,
    errors: Vec<ReceivedError>,
}

impl FakePlug {
    pub fn new(
        knowledge: &AttackerKnowledge,
        phone_node: NodeId,
        https: SocketAddrV4,
        turn: SocketAddrV4,
    ) -> Self {
        FakePlug {
            identity: DeviceIdentity {
                mac: knowledge.victim_mac,
                serial: knowledge.victim_serial.clone(),
                description: "WeMo Switch".into(),
            },
            ap: ApInfo {
                ssid: knowledge.ap_ssid.clone(),
                ap_mac: knowledge.ap_mac,
            },
            phone_node,
            https,
            turn,
            plug_key: None,
            phone_key: None,
            keys_seq: None,
            relay_port: None,
            allocation_seq: None,
            hijacked: Vec::new(),
            errors: Vec::new(),
        }
    }

    pub fn plug_key(&self) -> Option<&SecretKey> {
        self.plug_key.as_ref()
    }

    pub fn phone_key(&self) -> Option<&SecretKey> {
        self.phone_key.as_ref()
    }

    pub fn keys_seq(&self) -> Option<u64> {
        self.keys_seq
    }

    pub fn relay_port(&self) -> Option<u16> {
        self.relay_port
    }

    pub fn allocation_seq(&self) -> Option<u64> {
        self.allocation_seq
    }

    pub fn hijacked(&self) -> &[(u64, SwitchAction)] {
        &self.hijacked
    }

    pub fn errors(&self) -> &[ReceivedError] {
        &self.errors
    }

    fn send_bind(&self, ctx: &mut Ctx<'_>, auth: crypto::AuthField) {
        let req = BindRequest {
            plug: self.identity.clone(),
            phone_id: FAKE_PHONE_ID.into(),
            phone_description: "Galaxy S7".into(),
            wifi: self.ap.clone(),
            timestamp: ctx.unix_time(),
            auth,
            re_register: true,
        };
        let _ = ctx.send(
            Destination::Addr(self.https),
            ProtocolMessage::BindRequest(req),
            Channel::Internet,
        );
    }

    /// Rebinding request with a dummy authorization and fabricated phone
    /// information.
    pub fn start_sharing(&mut self, ctx: &mut Ctx<'_>) {
        let auth = crypto::dummy_authorization(&self.identity, ctx.unix_time());
        self.send_bind(ctx, auth);
    }

    /// Take over the victim's relay allocation with `key`.
    pub fn start_hijack(&mut self, ctx: &mut Ctx<'_>, key: SecretKey) {
        self.plug_key = Some(key);
        let msg = ProtocolMessage::TurnChallengeRequest {
            serial: self.identity.serial.clone(),
        };
        let _ = ctx.send(Destination::Addr(self.turn), msg, Channel::Internet);
    }
}

impl Actor for FakePlug {
    fn on_message(&mut self, ctx: &mut Ctx<'_>, d: Delivery) {
        match d.msg {
            ProtocolMessage::BindResponse(BindResponse::TempKeyIssued { temp_key }) => {
                let nonce = crypto::random_nonce(ctx.rng());
                let auth = crypto::compute_authorization(
                    &temp_key,
                    &self.identity,
                    ctx.unix_time(),
                    nonce,
                );
                self.send_bind(ctx, auth);
            }
            ProtocolMessage::BindResponse(BindResponse::KeysIssued {
                plug_key,
                phone_key,
            }) => {
                self.plug_key = Some(plug_key);
                self.phone_key = Some(phone_key.clone());
                self.keys_seq = Some(d.seq);
                let msg = ProtocolMessage::PhoneKeyDelivery {
                    serial: self.identity.serial.clone(),
                    phone_key,
                };
                let _ = ctx.send(Destination::Node(self.phone_node), msg, Channel::LocalAp);
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
                self.allocation_seq = Some(d.seq);
            }
            ProtocolMessage::TurnRelayedCommand(relayed) => {
                if self
                    .plug_key
                    .as_ref()
                    .is_some_and(|k| relayed.verify(k).is_accept())
                {
                    self.hijacked.push((d.seq, relayed.command.action));
                }
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

/// The attacker's software actors on their own NAT'd network.
#[derive(Debug, Clone)]
pub struct Attacker {
    pub knowledge: AttackerKnowledge,
    pub router: ApId,
    pub fake_plug: NodeId,
    pub fake_phone: NodeId,
}

impl Attacker {
    /// Place the attacker on a fresh router with its own public address.
    /// Only the public server addresses and `knowledge` are handed over.
    pub fn deploy(tb: &mut Testbed, knowledge: AttackerKnowledge) -> Result<Self> {
        let router = tb
            .sim
            .add_router(ATTACKER_SSID, MacAddr([0x02, 0xba, 0xd0, 0x00, 0x00, 0x01]));
        let forged = DeviceIdentity {
            mac: knowledge.victim_mac,
            serial: knowledge.victim_serial.clone(),
            description: "WeMo Switch".into(),
        };
        let phone_app =
            Smartphone::new(FAKE_PHONE_ID, "Galaxy S7", tb.https_addr).with_known_plug(forged);
        let fake_phone = tb.sim.add_actor(
            "fake-phone",
            MacAddr([0x02, 0xba, 0xd0, 0x00, 0x00, 0x02]),
            Attachment::Lan(router),
            phone_app,
        )?;
        let fake = FakePlug::new(&knowledge, fake_phone, tb.https_addr, tb.turn_addr);
        let fake_plug = tb.sim.add_actor(
            "fake-plug",
            MacAddr([0x02, 0xba, 0xd0, 0x00, 0x00, 0x03]),
            Attachment::Lan(router),
            fake,
        )?;
        Ok(Attacker {
            knowledge,
            router,
            fake_plug,
            fake_phone,
        })
    }

    pub fn fake_plug_state<'a>(&self, tb: &'a Testbed) -> &'a FakePlug {
        tb.sim.actor::<FakePlug>(self.fake_plug).expect("fake plug")
    }

    pub fn fake_phone_state<'a>(&self, tb: &'a Testbed) -> &'a Smartphone {
        tb.sim
            .actor::<Smartphone>(self.fake_phone)
            .expect("fake phone")
    }
}

fn errors_since(
    errors: &[ReceivedError],
    since: u64,
    kind: MessageKind,
    code: ErrorCode,
) -> Option<u64> {
    errors
        .iter()
        .find(|e| e.seq >= since && e.in_reply_to == kind && e.code == code)
        .map(|e| e.seq)
}

/// Fake rebinding with a dummy authorization, then use of the issued phone
/// key against the victim's plug.
///
/// The victim plug keeps behaving normally throughout: it syncs its status
/// and renews its relay allocation after the attacker's rebinding.
pub fn run_sharing_attack(tb: &mut Testbed, attacker: &mut Attacker) -> Result<AttackOutcome> {
    let start = tb.sim.trace_len();
    tb.sim
        .invoke::<FakePlug, _>(attacker.fake_plug, |p, ctx| p.start_sharing(ctx))?;
    tb.sim.run_until_idle();

    let fake = attacker.fake_plug_state(tb);
    let (Some(plug_key), Some(keys_seq)) = (fake.plug_key().cloned(), fake.keys_seq()) else {
        let evidence = fake.errors().iter().map(|e| e.seq).collect();
        return Ok(AttackOutcome::failed(evidence));
    };
    let fake_phone = attacker.fake_phone_state(tb);
    let Some(phone_seq) = fake_phone.key_seq() else {
        return Ok(AttackOutcome::failed(vec![keys_seq]));
    };
    attacker.knowledge.stolen_plug_key = Some(plug_key);
    attacker.knowledge.attacker_phone_key = fake_phone.phone_key().cloned();

    // The real plug carries on as usual.
    tb.plug_sync()?;
    tb.plug_reallocate()?;
    let plug = tb.plug_state();
    let auth_rejected = errors_since(
        plug.errors(),
        start,
        MessageKind::StatusUpdate,
        ErrorCode::AuthRejected,
    );
    let chap_rejected = errors_since(
        plug.errors(),
        start,
        MessageKind::TurnAllocateRequest,
        ErrorCode::AllocationDenied,
    );

    // Attacker flips the switch, then the victim uses the plug as usual.
    let before = tb.plug_state().stats().relayed_commands.len();
    let attacker_action = tb.plug_state().switch().opposite();
    tb.control(attacker.fake_phone, attacker_action)?;
    let after_attacker = tb.plug_state().stats().relayed_commands.clone();
    let attacker_applied =
        after_attacker.len() > before && tb.plug_state().switch() == attacker_action;

    let victim_action = attacker_action.opposite();
    tb.control(tb.phone, victim_action)?;
    let after_victim = tb.plug_state().stats().relayed_commands.clone();
    let victim_applied =
        after_victim.len() > after_attacker.len() && tb.plug_state().switch() == victim_action;

    if attacker_applied && victim_applied {
        return Ok(AttackOutcome {
            kind: OutcomeKind::AttackerControls,
            evidence: vec![
                keys_seq,
                phone_seq,
                after_attacker[before],
                after_victim[after_attacker.len()],
            ],
        });
    }
    if let (Some(auth), Some(chap)) = (auth_rejected, chap_rejected) {
        return Ok(AttackOutcome {
            kind: OutcomeKind::VictimDoS,
            evidence: vec![keys_seq, auth, chap],
        });
    }
    Ok(AttackOutcome::failed(vec![keys_seq]))
}

/// Number of commands the victim sends after the relay is taken over.
pub const HIJACK_PROBES: usize = 3;

/// Re-allocate the victim's TURN relay with the stolen plug key, then let
/// the victim issue commands.
pub fn run_hijack_attack(tb: &mut Testbed, attacker: &mut Attacker) -> Result<AttackOutcome> {
    let Some(key) = attacker.knowledge.stolen_plug_key.clone() else {
        return Ok(AttackOutcome::failed(Vec::new()));
    };
    let start = tb.sim.trace_len();
    tb.sim
        .invoke::<FakePlug, _>(attacker.fake_plug, |p, ctx| p.start_hijack(ctx, key))?;
    tb.sim.run_until_idle();

    let fake = attacker.fake_plug_state(tb);
    let Some(allocation_seq) = fake.allocation_seq().filter(|s| *s >= start) else {
        let denied = errors_since(
            fake.errors(),
            start,
            MessageKind::TurnAllocateRequest,
            ErrorCode::AllocationDenied,
        );
        return Ok(AttackOutcome::failed(denied.into_iter().collect()));
    };

    let real_before = tb.plug_state().stats().relayed_commands.len();
    let fake_before = attacker.fake_plug_state(tb).hijacked().len();
    let mut action = tb.plug_state().switch();
    let mut acked = 0;
    for _ in 0..HIJACK_PROBES {
        action = action.opposite();
        if tb.control(tb.phone, action)? {
            acked += 1;
        }
    }
    let real_after = tb.plug_state().stats().relayed_commands.len();
    let stolen: Vec<u64> = attacker.fake_plug_state(tb).hijacked()[fake_before..]
        .iter()
        .map(|(seq, _)| *seq)
        .collect();

    if acked == HIJACK_PROBES && stolen.len() == HIJACK_PROBES && real_after == real_before {
        let mut evidence = vec![allocation_seq];
        evidence.extend(stolen);
        return Ok(AttackOutcome {
            kind: OutcomeKind::VictimDoS,
            evidence,
        });
    }
    Ok(AttackOutcome::failed(vec![allocation_seq]))
}

/// Relayed-command deliveries that reached the real plug, by seq.
pub fn real_plug_deliveries(tb: &Testbed) -> Vec<u64> {
    tb.sim
        .actor::<SmartPlug>(tb.plug)
        .map(|p| p.stats().relayed_commands.clone())
        .unwrap_or_default()
}
