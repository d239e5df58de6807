//! Named end-to-end scenarios. Each one drives a [`Testbed`], checks its own
//! postconditions, and produces a report plus the final actor states.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::actors::{Smartphone, STALE_AFTER};
use crate::attacks::{self, Attacker, OutcomeKind};
use crate::crypto::SecretKey;
use crate::messages::{
    BindResponse, LocalAction, MacAddr, MessageKind, PlugStatus, ProtocolMessage, SwitchAction,
};
use crate::simnet::{Attachment, TraceRecord};
use crate::testbed::{Result, Testbed, TestbedConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioName {
    Benign,
    SharingAttack,
    SharingAttackPatched,
    Hijack,
    LocalControl,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 5] = [
        ScenarioName::Benign,
        ScenarioName::SharingAttack,
        ScenarioName::SharingAttackPatched,
        ScenarioName::Hijack,
        ScenarioName::LocalControl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Benign => "benign",
            ScenarioName::SharingAttack => "sharing-attack",
            ScenarioName::SharingAttackPatched => "sharing-attack-patched",
            ScenarioName::Hijack => "hijack",
            ScenarioName::LocalControl => "local-control",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ScenarioName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = ScenarioName::ALL.iter().map(|n| n.as_str()).collect();
                format!("unknown scenario {s:?} (known: {})", known.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlugFinal {
    pub serial: String,
    pub phase: String,
    pub switch: String,
    pub plug_key: Option<String>,
    pub relay_port: Option<u16>,
    pub relayed_commands: usize,
    pub local_commands: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneFinal {
    pub phone_id: String,
    pub phone_key: Option<String>,
    pub last_status: Option<u8>,
    pub control_acks: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BindingFinal {
    pub plug_key: String,
    pub phones: Vec<String>,
    pub last_public_ip: String,
    pub relay_port: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationFinal {
    pub relay_port: u16,
    pub holder: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalStates {
    pub vtime: u64,
    pub plug: PlugFinal,
    pub phones: Vec<PhoneFinal>,
    pub bindings: BTreeMap<String, BindingFinal>,
    pub allocations: BTreeMap<String, AllocationFinal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub patched: bool,
    pub outcome: String,
    pub evidence: Vec<u64>,
    pub checks: Vec<Check>,
    pub final_states: FinalStates,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub struct ScenarioRun {
    pub testbed: Testbed,
    pub report: Report,
}

impl ScenarioRun {
    pub fn trace(&self) -> &[TraceRecord] {
        self.testbed.sim.trace()
    }

    pub fn trace_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.testbed
            .sim
            .write_trace(&mut out)
            .expect("writing to memory");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioOptions {
    pub seed: u64,
    pub patched: bool,
    pub vendor_oui: [u8; 3],
}

impl ScenarioOptions {
    pub fn new(seed: u64) -> Self {
        ScenarioOptions {
            seed,
            patched: false,
            vendor_oui: crate::testbed::BELKIN_OUI,
        }
    }
}

struct Checks(Vec<Check>);

impl Checks {
    fn check(&mut self, name: &str, passed: bool) {
        self.0.push(Check {
            name: name.to_string(),
            passed,
        });
    }
}

fn key_hex(key: Option<&SecretKey>) -> Option<String> {
    key.map(SecretKey::to_hex)
}

fn phone_final(phone: &Smartphone) -> PhoneFinal {
    PhoneFinal {
        phone_id: phone.phone_id().to_string(),
        phone_key: key_hex(phone.phone_key()),
        last_status: phone.last_status().map(PlugStatus::code),
        control_acks: phone.control_acks().len(),
        errors: phone.errors().len(),
    }
}

pub fn final_states(tb: &Testbed, extra_phones: &[crate::simnet::NodeId]) -> FinalStates {
    let plug = tb.plug_state();
    let server = tb.server();
    let mut phones = vec![phone_final(tb.phone_state())];
    for id in extra_phones {
        if let Ok(p) = tb.sim.actor::<Smartphone>(*id) {
            phones.push(phone_final(p));
        }
    }
    FinalStates {
        vtime: tb.sim.now(),
        plug: PlugFinal {
            serial: plug.identity().serial.clone(),
            phase: format!("{:?}", plug.phase()),
            switch: format!("{:?}", plug.switch()),
            plug_key: key_hex(plug.plug_key()),
            relay_port: plug.relay_port(),
            relayed_commands: plug.stats().relayed_commands.len(),
            local_commands: plug.stats().local_commands,
        },
        phones,
        bindings: server
            .bindings()
            .iter()
            .map(|(serial, b)| {
                (
                    serial.clone(),
                    BindingFinal {
                        plug_key: b.plug_key.to_hex(),
                        phones: b.phones.keys().cloned().collect(),
                        last_public_ip: b.last_public_ip.to_string(),
                        relay_port: server.relay_port(serial),
                    },
                )
            })
            .collect(),
        allocations: tb
            .turn_state()
            .allocations()
            .iter()
            .map(|(serial, a)| {
                (
                    serial.clone(),
                    AllocationFinal {
                        relay_port: a.relay_port,
                        holder: a.holder.to_string(),
                    },
                )
            })
            .collect(),
    }
}

/// Delivered records of `kind`, in trace order.
pub fn delivered<'a>(
    trace: &'a [TraceRecord],
    kind: MessageKind,
) -> impl Iterator<Item = &'a TraceRecord> + 'a {
    trace
        .iter()
        .filter(move |r| r.is_delivery() && r.kind == kind.name())
}

/// Whether the first occurrence of each protocol phase comes in the order
/// pairing, binding, authentication, controlling.
pub fn phases_in_order(trace: &[TraceRecord]) -> bool {
    let order = ["pairing", "binding", "authentication", "controlling"];
    let firsts: Vec<Option<u64>> = order
        .iter()
        .map(|p| {
            trace
                .iter()
                .find(|r| r.annotations.get("phase").map(String::as_str) == Some(*p))
                .map(|r| r.seq)
        })
        .collect();
    firsts.iter().all(Option::is_some) && firsts.windows(2).all(|w| w[0] < w[1])
}

/// Dummy-authorized first request answered with a temporary key, then a
/// second request answered with both keys.
pub fn two_step_binding(trace: &[TraceRecord]) -> bool {
    let requests: Vec<ProtocolMessage> = delivered(trace, MessageKind::BindRequest)
        .filter_map(|r| r.message().ok())
        .collect();
    let responses: Vec<ProtocolMessage> = delivered(trace, MessageKind::BindResponse)
        .filter_map(|r| r.message().ok())
        .collect();
    let first_dummy =
        matches!(requests.first(), Some(ProtocolMessage::BindRequest(r)) if r.auth.is_dummy());
    let second_keyed =
        matches!(requests.get(1), Some(ProtocolMessage::BindRequest(r)) if !r.auth.is_dummy());
    let temp_then_keys = matches!(
        responses.as_slice(),
        [
            ProtocolMessage::BindResponse(BindResponse::TempKeyIssued { .. }),
            ProtocolMessage::BindResponse(BindResponse::KeysIssued { .. }),
            ..
        ]
    );
    first_dummy && second_keyed && temp_then_keys
}

fn benign(tb: &mut Testbed, checks: &mut Checks) -> Result<(String, Vec<u64>)> {
    tb.setup()?;
    let phone = tb.phone;
    let initial = tb.query(phone)?;
    let on_acked = tb.control(phone, SwitchAction::On)?;
    let on_status = tb.query(phone)?;
    let off_acked = tb.control(phone, SwitchAction::Off)?;
    let off_status = tb.query(phone)?;
    tb.plug_sync()?;

    tb.sim.set_powered(tb.plug, false)?;
    tb.idle(STALE_AFTER + 1);
    let offline = tb.query(phone)?;

    let trace = tb.sim.trace();
    checks.check("phases appear in order", phases_in_order(trace));
    checks.check("two-step binding", two_step_binding(trace));
    checks.check("phone holds a key", tb.phone_state().phone_key().is_some());
    checks.check("plug and phone keys match the binding", {
        let binding = tb.server().binding(&tb.serial());
        binding.is_some_and(|b| {
            Some(&b.plug_key) == tb.plug_state().plug_key()
                && b.phones
                    .get(tb.phone_state().phone_id())
                    .map(|p| &p.phone_key)
                    == tb.phone_state().phone_key()
        })
    });
    checks.check("initial status 0", initial == Some(PlugStatus::SwitchOff));
    checks.check(
        "on command acked and status 1",
        on_acked && on_status == Some(PlugStatus::SwitchOn),
    );
    checks.check(
        "off command acked and status 0",
        off_acked && off_status == Some(PlugStatus::SwitchOff),
    );
    checks.check(
        "offline plug reports 3",
        offline == Some(PlugStatus::Unavailable),
    );
    checks.check(
        "two commands relayed to the plug",
        tb.plug_state().stats().relayed_commands.len() == 2,
    );
    let evidence = tb.plug_state().stats().relayed_commands.clone();
    Ok(("Completed".into(), evidence))
}

fn deploy_attacker(tb: &mut Testbed, checks: &mut Checks) -> Result<Option<Attacker>> {
    let region = [tb.home, tb.neighbour, tb.cellular];
    let mut found = attacks::wardrive(&tb.sim, &region, tb.config.vendor_oui);
    checks.check("wardriving finds exactly the victim plug", found.len() == 1);
    if found.len() != 1 {
        return Ok(None);
    }
    let knowledge = found.remove(0);
    checks.check(
        "inferred serial matches the plug",
        knowledge.victim_serial == tb.serial(),
    );
    Ok(Some(Attacker::deploy(tb, knowledge)?))
}

fn sharing(
    tb: &mut Testbed,
    checks: &mut Checks,
    patched: bool,
) -> Result<(String, Vec<u64>, Vec<crate::simnet::NodeId>)> {
    tb.setup()?;
    let original = tb.plug_state().plug_key().cloned();
    let Some(mut attacker) = deploy_attacker(tb, checks)? else {
        return Ok(("Failed".into(), Vec::new(), Vec::new()));
    };
    let outcome = attacks::run_sharing_attack(tb, &mut attacker)?;
    checks.check(
        "evidence records are in the trace",
        outcome.evidence_in_trace(&tb.sim),
    );
    let stolen = attacker.knowledge.stolen_plug_key.clone();
    if patched {
        checks.check(
            "outcome is VictimDoS",
            outcome.kind == OutcomeKind::VictimDoS,
        );
        checks.check(
            "issued plug key differs from the original",
            stolen.is_some() && stolen != original,
        );
    } else {
        checks.check(
            "outcome is AttackerControls",
            outcome.kind == OutcomeKind::AttackerControls,
        );
        checks.check(
            "stolen plug key equals the original",
            stolen.is_some() && stolen == original,
        );
        checks.check(
            "attacker phone key is valid on the server",
            tb.server()
                .binding(&tb.serial())
                .and_then(|b| b.phones.get(attacks::FAKE_PHONE_ID))
                .map(|p| &p.phone_key)
                == attacker.knowledge.attacker_phone_key.as_ref(),
        );
    }
    Ok((
        format!("{:?}", outcome.kind),
        outcome.evidence,
        vec![attacker.fake_phone],
    ))
}

fn hijack(
    tb: &mut Testbed,
    checks: &mut Checks,
) -> Result<(String, Vec<u64>, Vec<crate::simnet::NodeId>)> {
    tb.setup()?;
    let Some(mut attacker) = deploy_attacker(tb, checks)? else {
        return Ok(("Failed".into(), Vec::new(), Vec::new()));
    };
    let shared = attacks::run_sharing_attack(tb, &mut attacker)?;
    checks.check(
        "sharing step yields a plug key",
        attacker.knowledge.stolen_plug_key.is_some(),
    );
    let binding_before = tb.server().binding(&tb.serial()).cloned();
    let real_before = tb.plug_state().stats().relayed_commands.len();
    let outcome = attacks::run_hijack_attack(tb, &mut attacker)?;
    checks.check(
        "outcome is VictimDoS",
        outcome.kind == OutcomeKind::VictimDoS,
    );
    checks.check(
        "evidence records are in the trace",
        outcome.evidence_in_trace(&tb.sim),
    );
    checks.check(
        "real plug received no commands after the hijack",
        tb.plug_state().stats().relayed_commands.len() == real_before,
    );
    checks.check(
        "every victim command reached the fake plug",
        attacker.fake_plug_state(tb).hijacked().len() == attacks::HIJACK_PROBES,
    );
    checks.check(
        "binding record unchanged by the hijack",
        tb.server().binding(&tb.serial()).cloned() == binding_before,
    );
    let mut evidence = shared.evidence;
    evidence.extend(outcome.evidence);
    Ok((
        format!("{:?}", outcome.kind),
        evidence,
        vec![attacker.fake_phone],
    ))
}

pub const INTRUDER_PHONE_ID: &str = "phone-0002";

fn local_control(
    tb: &mut Testbed,
    checks: &mut Checks,
) -> Result<(String, Vec<u64>, Vec<crate::simnet::NodeId>)> {
    tb.pair()?;
    tb.bind()?;
    let plug_identity = tb.plug_state().identity().clone();
    let intruder_app =
        Smartphone::new(INTRUDER_PHONE_ID, "Moto G", tb.https_addr).with_known_plug(plug_identity);
    let intruder = tb.sim.add_actor(
        "intruder-phone",
        MacAddr([0x02, 0x11, 0x22, 0x33, 0x44, 0x55]),
        Attachment::Lan(tb.home),
        intruder_app,
    )?;
    let before = tb.plug_state().switch();
    let toggled = tb.control_local(intruder, LocalAction::Toggle)?;
    let after_local = tb.plug_state().switch();
    checks.check(
        "unbound phone toggles the plug over the LAN",
        after_local == before.opposite(),
    );
    checks.check(
        "local ack reports the new state",
        toggled == Some(after_local.resulting_status()),
    );

    let remote_acked = tb.control(intruder, before)?;
    let app = tb.sim.actor::<Smartphone>(intruder)?;
    let rejected = app
        .errors()
        .iter()
        .find(|e| {
            e.in_reply_to == MessageKind::ControlCommand
                && e.code == crate::messages::ErrorCode::AuthRejected
        })
        .map(|e| e.seq);
    checks.check(
        "same phone is rejected on the remote path",
        !remote_acked && rejected.is_some(),
    );
    checks.check(
        "remote attempt left the plug unchanged",
        tb.plug_state().switch() == after_local,
    );

    let local_seq = delivered(tb.sim.trace(), MessageKind::LocalControl)
        .last()
        .map(|r| r.seq);
    let evidence: Vec<u64> = local_seq.into_iter().chain(rejected).collect();
    Ok(("AttackerControls".into(), evidence, vec![intruder]))
}

/// Run `name` to completion. Postcondition failures are reported in the
/// checks rather than as errors.
pub fn run(name: ScenarioName, options: &ScenarioOptions) -> Result<ScenarioRun> {
    let patched = options.patched || name == ScenarioName::SharingAttackPatched;
    let mut config = TestbedConfig::new(options.seed).patched(patched);
    config.vendor_oui = options.vendor_oui;
    let mut tb = Testbed::new(config)?;
    let mut checks = Checks(Vec::new());
    let (outcome, evidence, extra) = match name {
        ScenarioName::Benign => {
            let (o, e) = benign(&mut tb, &mut checks)?;
            (o, e, Vec::new())
        }
        ScenarioName::SharingAttack | ScenarioName::SharingAttackPatched => {
            sharing(&mut tb, &mut checks, patched)?
        }
        ScenarioName::Hijack => hijack(&mut tb, &mut checks)?,
        ScenarioName::LocalControl => local_control(&mut tb, &mut checks)?,
    };
    let report = Report {
        scenario: name.to_string(),
        seed: options.seed,
        patched,
        outcome,
        evidence,
        checks: checks.0,
        final_states: final_states(&tb, &extra),
    };
    Ok(ScenarioRun {
        testbed: tb,
        report,
    })
}
