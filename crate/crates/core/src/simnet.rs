//! Deterministic discrete-event network.
//!
//! Nodes hang off access points. An access point either belongs to a home
//! router (and then NATs its stations onto the router's public address) or
//! is a soft AP opened by a device during pairing. Servers sit directly on
//! public addresses and talk to each other over a private server channel.
//!
//! Every hop costs one unit of virtual time. Events at equal time run in
//! send order, which gives per-link FIFO delivery. Each delivery or drop is
//! appended to the trace exactly once.

use std::any::Any;
use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::io::{self, Write};
use std::net::{Ipv4Addr, SocketAddrV4};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::messages::{self, MacAddr, MessageKind, ProtocolMessage};

/// Unix time corresponding to virtual time zero.
pub const BASE_UNIX_TIME: u64 = 1_500_000_000;
/// Cost of one hop in virtual time units.
pub const HOP_DELAY: u64 = 1;

const FIRST_PUBLIC_IP: u32 = u32::from_be_bytes([198, 18, 0, 1]);
const FIRST_NAT_PORT: u16 = 40000;
const CLIENT_PORT: u16 = 49152;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("address error: {0}")]
    Address(String),
    #[error("lifecycle error: {0}")]
    Lifecycle(String),
    #[error("channel error: {0}")]
    Channel(String),
    #[error("node {0} does not host an actor of the requested type")]
    ActorType(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ApId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    LocalAp,
    Internet,
    ServerInternal,
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Channel::LocalAp => "LocalAp",
            Channel::Internet => "Internet",
            Channel::ServerInternal => "ServerInternal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Destination {
    /// A station on a shared AP, or a server on the internal channel.
    Node(NodeId),
    /// A public transport address.
    Addr(SocketAddrV4),
}

/// Who a delivery came from, as the receiver can observe it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Peer {
    Node(NodeId),
    /// Observed source address after NAT.
    Addr(SocketAddrV4),
}

#[derive(Debug, Clone)]
pub struct Delivery {
    pub seq: u64,
    pub channel: Channel,
    pub from: Peer,
    pub msg: ProtocolMessage,
}

/// How a node reaches the internet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attachment {
    /// Directly on a public address (servers).
    Public,
    /// Station of an access point.
    Lan(ApId),
    /// No network yet.
    Detached,
}

/// Public view of where a node sits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeAddress {
    pub node: NodeId,
    pub label: String,
    pub mac: MacAddr,
    pub private_ip: Ipv4Addr,
    pub public_ip: Option<Ipv4Addr>,
    pub lans: Vec<ApId>,
}

#[derive(Debug, Clone)]
pub struct NatRouter {
    pub public_ip: Ipv4Addr,
    bindings: BTreeMap<(Ipv4Addr, u16), u16>,
    reverse: BTreeMap<u16, (Ipv4Addr, u16)>,
    next_port: u16,
}

impl NatRouter {
    fn new(public_ip: Ipv4Addr) -> Self {
        NatRouter {
            public_ip,
            bindings: BTreeMap::new(),
            reverse: BTreeMap::new(),
            next_port: FIRST_NAT_PORT,
        }
    }

    /// Public port for a private flow; stable while the flow lives.
    pub fn bind(&mut self, private: (Ipv4Addr, u16)) -> u16 {
        if let Some(port) = self.bindings.get(&private) {
            return *port;
        }
        let port = self.next_port;
        self.next_port = self
            .next_port
            .checked_add(1)
            .expect("NAT port space exhausted");
        self.bindings.insert(private, port);
        self.reverse.insert(port, private);
        port
    }

    pub fn lookup(&self, public_port: u16) -> Option<(Ipv4Addr, u16)> {
        self.reverse.get(&public_port).copied()
    }

    pub fn binding_count(&self) -> usize {
        self.bindings.len()
    }

    fn reset(&mut self, public_ip: Ipv4Addr) {
        self.public_ip = public_ip;
        self.bindings.clear();
        self.reverse.clear();
    }
}

#[derive(Debug, Clone)]
struct AccessPoint {
    ssid: String,
    ap_mac: MacAddr,
    nat: Option<NatRouter>,
    open: bool,
}

#[derive(Debug, Clone)]
struct NodeInfo {
    label: String,
    mac: MacAddr,
    private_ip: Ipv4Addr,
    port: u16,
    public_ip: Option<Ipv4Addr>,
    lans: BTreeSet<ApId>,
    /// AP whose NAT carries this node's internet traffic.
    gateway: Option<ApId>,
    powered: bool,
}

/// What a passive observer near an AP can learn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApSurvey {
    pub ap: ApId,
    /// Whether the AP is a home router rather than a device's soft AP.
    pub is_router: bool,
    pub ssid: String,
    pub ap_mac: MacAddr,
    pub stations: Vec<MacAddr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEndpoint {
    pub node: Option<NodeId>,
    pub label: String,
    pub addr: String,
}

/// One line of the capture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub vtime: u64,
    pub src: TraceEndpoint,
    pub dst: TraceEndpoint,
    pub channel: Channel,
    pub kind: String,
    pub payload_hex: String,
    pub annotations: BTreeMap<String, String>,
}

impl TraceRecord {
    pub fn is_delivery(&self) -> bool {
        self.annotations.get("event").map(String::as_str) == Some("deliver")
    }

    pub fn message(&self) -> Result<ProtocolMessage, messages::ParseError> {
        let bytes = hex::decode(&self.payload_hex).map_err(|e| messages::ParseError {
            offset: 0,
            reason: format!("payload_hex: {e}"),
        })?;
        messages::deserialize(&bytes)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace records always serialize")
    }
}

pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> io::Result<()> {
    for record in records {
        writeln!(out, "{}", record.to_json_line())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnifferFilter {
    Channel(Channel),
    /// Records where the node is source or destination.
    Node(NodeId),
}

impl SnifferFilter {
    fn matches(&self, record: &TraceRecord) -> bool {
        match self {
            SnifferFilter::Channel(c) => record.channel == *c,
            SnifferFilter::Node(n) => record.src.node == Some(*n) || record.dst.node == Some(*n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnifferId(usize);

#[derive(Debug, Clone)]
struct Packet {
    src: NodeId,
    src_peer: Peer,
    src_addr: String,
    dst: Destination,
    channel: Channel,
    msg: ProtocolMessage,
}

struct Scheduled {
    at: u64,
    order: u64,
    packet: Packet,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.order) == (other.at, other.order)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.order).cmp(&(other.at, other.order))
    }
}

pub type DropHook = Box<dyn FnMut(&ProtocolMessage, Channel) -> bool + Send>;

/// Everything but the actors.
pub struct Network {
    now: u64,
    rng: ChaCha8Rng,
    nodes: Vec<NodeInfo>,
    aps: Vec<AccessPoint>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    next_order: u64,
    next_public_ip: u32,
    trace: Vec<TraceRecord>,
    sniffers: Vec<(SnifferFilter, Vec<usize>)>,
    drop_hook: Option<DropHook>,
    shut_down: bool,
}

impl Network {
    fn new(seed: u64) -> Self {
        Network {
            now: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            nodes: Vec::new(),
            aps: Vec::new(),
            queue: BinaryHeap::new(),
            next_order: 0,
            next_public_ip: FIRST_PUBLIC_IP,
            trace: Vec::new(),
            sniffers: Vec::new(),
            drop_hook: None,
            shut_down: false,
        }
    }

    fn allocate_public_ip(&mut self) -> Ipv4Addr {
        let ip = Ipv4Addr::from(self.next_public_ip);
        self.next_public_ip += 1;
        ip
    }

    fn node(&self, id: NodeId) -> Result<&NodeInfo, NetError> {
        self.nodes
            .get(id.0 as usize)
            .ok_or_else(|| NetError::Address(format!("unknown node {id}")))
    }

    fn node_mut(&mut self, id: NodeId) -> Result<&mut NodeInfo, NetError> {
        self.nodes
            .get_mut(id.0 as usize)
            .ok_or_else(|| NetError::Address(format!("unknown node {id}")))
    }

    fn ap(&self, id: ApId) -> Result<&AccessPoint, NetError> {
        self.aps
            .get(id.0 as usize)
            .ok_or_else(|| NetError::Address(format!("unknown access point {}", id.0)))
    }

    fn add_ap(&mut self, ssid: &str, ap_mac: MacAddr, nat: bool) -> ApId {
        let nat = nat.then(|| NatRouter::new(self.allocate_public_ip()));
        self.aps.push(AccessPoint {
            ssid: ssid.to_string(),
            ap_mac,
            nat,
            open: true,
        });
        ApId(self.aps.len() as u32 - 1)
    }

    fn add_node(
        &mut self,
        label: &str,
        mac: MacAddr,
        attachment: Attachment,
    ) -> Result<NodeId, NetError> {
        let id = NodeId(self.nodes.len() as u32);
        let n = self.nodes.len() as u32 + 2;
        let private_ip = Ipv4Addr::new(10, (n >> 16) as u8, (n >> 8) as u8, n as u8);
        let mut info = NodeInfo {
            label: label.to_string(),
            mac,
            private_ip,
            port: CLIENT_PORT,
            public_ip: None,
            lans: BTreeSet::new(),
            gateway: None,
            powered: true,
        };
        match attachment {
            Attachment::Public => info.public_ip = Some(self.allocate_public_ip()),
            Attachment::Lan(ap) => {
                let ap_info = self.ap(ap)?;
                info.lans.insert(ap);
                if ap_info.nat.is_some() {
                    info.gateway = Some(ap);
                }
            }
            Attachment::Detached => {}
        }
        self.nodes.push(info);
        Ok(id)
    }

    fn join_lan(&mut self, node: NodeId, ap: ApId) -> Result<(), NetError> {
        let ap_info = self.ap(ap)?;
        if !ap_info.open {
            return Err(NetError::Address(format!(
                "access point {} is closed",
                ap.0
            )));
        }
        let has_nat = ap_info.nat.is_some();
        let info = self.node_mut(node)?;
        info.lans.insert(ap);
        if has_nat {
            info.gateway = Some(ap);
        }
        Ok(())
    }

    fn leave_lans(&mut self, node: NodeId) -> Result<(), NetError> {
        let info = self.node_mut(node)?;
        info.lans.clear();
        info.gateway = None;
        Ok(())
    }

    fn find_ssid(&self, ssid: &str) -> Option<ApId> {
        self.aps
            .iter()
            .position(|ap| ap.open && ap.nat.is_some() && ap.ssid == ssid)
            .map(|i| ApId(i as u32))
    }

    fn shared_lan(&self, a: NodeId, b: NodeId) -> Option<ApId> {
        let (a, b) = (self.node(a).ok()?, self.node(b).ok()?);
        a.lans
            .intersection(&b.lans)
            .copied()
            .find(|ap| self.aps[ap.0 as usize].open)
    }

    fn public_addr(&self, id: NodeId) -> Result<SocketAddrV4, NetError> {
        let info = self.node(id)?;
        match info.public_ip {
            Some(ip) => Ok(SocketAddrV4::new(ip, info.port)),
            None => Err(NetError::Address(format!(
                "node {id} has no public address"
            ))),
        }
    }

    fn send(
        &mut self,
        src: NodeId,
        dst: Destination,
        msg: ProtocolMessage,
        channel: Channel,
    ) -> Result<(), NetError> {
        if self.shut_down {
            return Err(NetError::Lifecycle("network has been shut down".into()));
        }
        let info = self.node(src)?.clone();
        let (src_peer, src_addr) = match channel {
            Channel::LocalAp => {
                let Destination::Node(dst_node) = dst else {
                    return Err(NetError::Channel(
                        "local delivery needs a node destination".into(),
                    ));
                };
                self.node(dst_node)?;
                if self.shared_lan(src, dst_node).is_none() {
                    return Err(NetError::Channel(format!(
                        "{} and {} share no access point",
                        info.label,
                        self.node(dst_node)?.label
                    )));
                }
                (
                    Peer::Node(src),
                    format!("{}:{}", info.private_ip, info.port),
                )
            }
            Channel::ServerInternal => {
                let Destination::Node(dst_node) = dst else {
                    return Err(NetError::Channel(
                        "internal delivery needs a node destination".into(),
                    ));
                };
                if info.public_ip.is_none() || self.node(dst_node)?.public_ip.is_none() {
                    return Err(NetError::Channel(
                        "internal channel joins servers only".into(),
                    ));
                }
                (Peer::Node(src), self.public_addr(src)?.to_string())
            }
            Channel::Internet => {
                if !matches!(dst, Destination::Addr(_)) {
                    return Err(NetError::Channel(
                        "internet delivery needs an address".into(),
                    ));
                }
                let observed = if let Some(ip) = info.public_ip {
                    SocketAddrV4::new(ip, info.port)
                } else if let Some(gw) = info.gateway {
                    let nat = self.aps[gw.0 as usize]
                        .nat
                        .as_mut()
                        .expect("gateways always NAT");
                    let port = nat.bind((info.private_ip, info.port));
                    SocketAddrV4::new(nat.public_ip, port)
                } else {
                    return Err(NetError::Address(format!(
                        "{} has no route to the internet",
                        info.label
                    )));
                };
                (Peer::Addr(observed), observed.to_string())
            }
        };
        let order = self.next_order;
        self.next_order += 1;
        self.queue.push(Reverse(Scheduled {
            at: self.now + HOP_DELAY,
            order,
            packet: Packet {
                src,
                src_peer,
                src_addr,
                dst,
                channel,
                msg,
            },
        }));
        Ok(())
    }

    /// Resolve the receiving node of a packet at delivery time.
    fn resolve(&self, packet: &Packet) -> Result<(NodeId, String), String> {
        match packet.dst {
            Destination::Node(n) => {
                let info = self.node(n).map_err(|e| e.to_string())?;
                Ok((n, format!("{}:{}", info.private_ip, info.port)))
            }
            Destination::Addr(addr) => {
                if let Some(i) = self
                    .nodes
                    .iter()
                    .position(|n| n.public_ip == Some(*addr.ip()) && n.port == addr.port())
                {
                    return Ok((NodeId(i as u32), addr.to_string()));
                }
                let Some(ap) = self.aps.iter().position(|ap| {
                    ap.nat
                        .as_ref()
                        .is_some_and(|nat| nat.public_ip == *addr.ip())
                }) else {
                    return Err(format!("no host at {addr}"));
                };
                let nat = self.aps[ap].nat.as_ref().unwrap();
                let (ip, port) = nat
                    .lookup(addr.port())
                    .ok_or_else(|| format!("no NAT binding for {addr}"))?;
                let i = self
                    .nodes
                    .iter()
                    .position(|n| {
                        n.private_ip == ip && n.port == port && n.gateway == Some(ApId(ap as u32))
                    })
                    .ok_or_else(|| {
                        format!("NAT binding for {addr} points at a departed station")
                    })?;
                Ok((NodeId(i as u32), addr.to_string()))
            }
        }
    }

    fn record(&mut self, packet: &Packet, dst: TraceEndpoint, outcome: Result<(), String>) -> u64 {
        let seq = self.trace.len() as u64;
        let kind = packet.msg.kind();
        let mut annotations = BTreeMap::new();
        annotations.insert("phase".to_string(), phase_of(&packet.msg).to_string());
        match outcome {
            Ok(()) => {
                annotations.insert("event".to_string(), "deliver".to_string());
            }
            Err(reason) => {
                annotations.insert("event".to_string(), "drop".to_string());
                annotations.insert("reason".to_string(), reason);
            }
        }
        let src_info = &self.nodes[packet.src.0 as usize];
        let record = TraceRecord {
            seq,
            vtime: self.now,
            src: TraceEndpoint {
                node: Some(packet.src),
                label: src_info.label.clone(),
                addr: packet.src_addr.clone(),
            },
            dst,
            channel: packet.channel,
            kind: kind.name().to_string(),
            payload_hex: hex::encode(messages::serialize(&packet.msg.redacted())),
            annotations,
        };
        for (filter, hits) in &mut self.sniffers {
            if filter.matches(&record) {
                hits.push(seq as usize);
            }
        }
        self.trace.push(record);
        seq
    }

    /// Pop the next event, record it, and return the delivery if any.
    fn step(&mut self) -> Option<Option<(NodeId, Delivery)>> {
        let Reverse(Scheduled { at, packet, .. }) = self.queue.pop()?;
        self.now = at;
        let resolved = self.resolve(&packet);
        let dropped_by_hook = match &mut self.drop_hook {
            Some(hook) => hook(&packet.msg, packet.channel),
            None => false,
        };
        let (dst_ep, outcome) = match &resolved {
            Ok((n, addr)) => {
                let info = &self.nodes[n.0 as usize];
                let ep = TraceEndpoint {
                    node: Some(*n),
                    label: info.label.clone(),
                    addr: addr.clone(),
                };
                if dropped_by_hook {
                    (ep, Err("dropped by hook".to_string()))
                } else if !info.powered {
                    (ep, Err("destination powered off".to_string()))
                } else {
                    (ep, Ok(()))
                }
            }
            Err(reason) => (
                TraceEndpoint {
                    node: None,
                    label: "?".into(),
                    addr: match packet.dst {
                        Destination::Addr(a) => a.to_string(),
                        Destination::Node(n) => n.to_string(),
                    },
                },
                Err(reason.clone()),
            ),
        };
        let delivered = outcome.is_ok();
        let seq = self.record(&packet, dst_ep, outcome);
        if !delivered {
            return Some(None);
        }
        let (dst, _) = resolved.unwrap();
        Some(Some((
            dst,
            Delivery {
                seq,
                channel: packet.channel,
                from: packet.src_peer,
                msg: packet.msg,
            },
        )))
    }
}

fn phase_of(msg: &ProtocolMessage) -> &'static str {
    match msg {
        ProtocolMessage::ErrorReply { in_reply_to, .. } => in_reply_to.phase(),
        other => other.kind().phase(),
    }
}

impl MessageKind {
    /// Protocol phase a message kind belongs to.
    pub fn phase(self) -> &'static str {
        use MessageKind as K;
        match self {
            K::PairGetInfoRequest
            | K::PairGetInfoResponse
            | K::PairSetupRequest
            | K::PairSetupAck => "pairing",
            K::BindRequest
            | K::BindResponse
            | K::KeyFetchRequest
            | K::KeyFetchResponse
            | K::PhoneKeyDelivery => "binding",
            K::TurnChallengeRequest
            | K::TurnChallenge
            | K::TurnAllocateRequest
            | K::TurnAllocateResponse
            | K::TurnAllocationNotice
            | K::TurnRevoke
            | K::KeyLookupRequest
            | K::KeyLookupResponse
            | K::StatusUpdate
            | K::StatusAck => "authentication",
            K::StatusQuery
            | K::StatusReply
            | K::ControlCommand
            | K::ControlAck
            | K::RelayForward
            | K::TurnRelayedCommand
            | K::LocalControl
            | K::LocalControlAck => "controlling",
            K::ErrorReply => "error",
        }
    }
}

/// Handle given to an actor while it runs.
pub struct Ctx<'a> {
    net: &'a mut Network,
    me: NodeId,
}

impl<'a> Ctx<'a> {
    pub fn me(&self) -> NodeId {
        self.me
    }

    pub fn now(&self) -> u64 {
        self.net.now
    }

    pub fn unix_time(&self) -> u64 {
        BASE_UNIX_TIME + self.net.now
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.net.rng
    }

    pub fn send(
        &mut self,
        dst: Destination,
        msg: ProtocolMessage,
        channel: Channel,
    ) -> Result<(), NetError> {
        self.net.send(self.me, dst, msg, channel)
    }

    pub fn reply(&mut self, to: &Delivery, msg: ProtocolMessage) -> Result<(), NetError> {
        let dst = match to.from {
            Peer::Node(n) => Destination::Node(n),
            Peer::Addr(a) => Destination::Addr(a),
        };
        self.send(dst, msg, to.channel)
    }

    pub fn shares_lan_with(&self, other: NodeId) -> bool {
        self.net.shared_lan(self.me, other).is_some()
    }

    /// Associate with the NAT'd access point broadcasting `ssid`.
    pub fn associate(&mut self, ssid: &str) -> Result<ApId, NetError> {
        let ap = self
            .net
            .find_ssid(ssid)
            .ok_or_else(|| NetError::Address(format!("no access point with SSID {ssid:?}")))?;
        self.net.join_lan(self.me, ap)?;
        Ok(ap)
    }

    pub fn leave_lans(&mut self) {
        self.net.leave_lans(self.me).expect("own node exists");
    }

    pub fn open_soft_ap(&mut self, ssid: &str) -> ApId {
        let mac = self.net.nodes[self.me.0 as usize].mac;
        let ap = self.net.add_ap(ssid, mac, false);
        self.net.join_lan(self.me, ap).expect("fresh AP is open");
        ap
    }

    pub fn close_soft_aps(&mut self) {
        let mac = self.net.nodes[self.me.0 as usize].mac;
        for ap in self
            .net
            .aps
            .iter_mut()
            .filter(|ap| ap.nat.is_none() && ap.ap_mac == mac)
        {
            ap.open = false;
        }
    }
}

pub trait Actor: Any + Send {
    fn on_message(&mut self, ctx: &mut Ctx<'_>, delivery: Delivery);
}

/// The network plus the actors living on its nodes.
pub struct Sim {
    net: Network,
    actors: Vec<Option<Box<dyn Actor>>>,
}

impl Sim {
    pub fn new(seed: u64) -> Self {
        Sim {
            net: Network::new(seed),
            actors: Vec::new(),
        }
    }

    pub fn now(&self) -> u64 {
        self.net.now
    }

    pub fn unix_time(&self) -> u64 {
        BASE_UNIX_TIME + self.net.now
    }

    /// Add a home router: an access point NAT'ing onto a fresh public IP.
    pub fn add_router(&mut self, ssid: &str, ap_mac: MacAddr) -> ApId {
        self.net.add_ap(ssid, ap_mac, true)
    }

    pub fn add_node(
        &mut self,
        label: &str,
        mac: MacAddr,
        attachment: Attachment,
    ) -> Result<NodeId, NetError> {
        let id = self.net.add_node(label, mac, attachment)?;
        self.actors.push(None);
        Ok(id)
    }

    pub fn add_actor<A: Actor>(
        &mut self,
        label: &str,
        mac: MacAddr,
        attachment: Attachment,
        actor: A,
    ) -> Result<NodeId, NetError> {
        let id = self.add_node(label, mac, attachment)?;
        self.actors[id.0 as usize] = Some(Box::new(actor));
        Ok(id)
    }

    pub fn address(&self, id: NodeId) -> Result<NodeAddress, NetError> {
        let info = self.net.node(id)?;
        let public_ip = info.public_ip.or_else(|| {
            info.gateway.and_then(|gw| {
                self.net.aps[gw.0 as usize]
                    .nat
                    .as_ref()
                    .map(|n| n.public_ip)
            })
        });
        Ok(NodeAddress {
            node: id,
            label: info.label.clone(),
            mac: info.mac,
            private_ip: info.private_ip,
            public_ip,
            lans: info.lans.iter().copied().collect(),
        })
    }

    pub fn set_port(&mut self, id: NodeId, port: u16) -> Result<(), NetError> {
        self.net.node_mut(id)?.port = port;
        Ok(())
    }

    pub fn public_addr(&self, id: NodeId) -> Result<SocketAddrV4, NetError> {
        self.net.public_addr(id)
    }

    pub fn router_public_ip(&self, ap: ApId) -> Result<Ipv4Addr, NetError> {
        self.net
            .ap(ap)?
            .nat
            .as_ref()
            .map(|n| n.public_ip)
            .ok_or_else(|| NetError::Address(format!("access point {} does not NAT", ap.0)))
    }

    pub fn nat(&self, ap: ApId) -> Option<&NatRouter> {
        self.net.aps.get(ap.0 as usize)?.nat.as_ref()
    }

    pub fn join_lan(&mut self, node: NodeId, ap: ApId) -> Result<(), NetError> {
        self.net.join_lan(node, ap)
    }

    pub fn leave_lans(&mut self, node: NodeId) -> Result<(), NetError> {
        self.net.leave_lans(node)
    }

    pub fn set_powered(&mut self, node: NodeId, powered: bool) -> Result<(), NetError> {
        self.net.node_mut(node)?.powered = powered;
        Ok(())
    }

    /// Move a NAT'd node's router to a never-before-used public IP. Existing
    /// NAT bindings are flushed, so in-flight replies to the old address drop.
    pub fn change_public_ip(&mut self, node: NodeId) -> Result<Ipv4Addr, NetError> {
        let gw = self
            .net
            .node(node)?
            .gateway
            .ok_or_else(|| NetError::Address(format!("node {node} is not behind a NAT")))?;
        let ip = self.net.allocate_public_ip();
        self.net.aps[gw.0 as usize]
            .nat
            .as_mut()
            .expect("gateways always NAT")
            .reset(ip);
        Ok(ip)
    }

    pub fn survey(&self, ap: ApId) -> Result<ApSurvey, NetError> {
        let info = self.net.ap(ap)?;
        let stations = self
            .net
            .nodes
            .iter()
            .filter(|n| n.lans.contains(&ap) && n.mac != info.ap_mac)
            .map(|n| n.mac)
            .collect();
        Ok(ApSurvey {
            ap,
            is_router: info.nat.is_some(),
            ssid: info.ssid.clone(),
            ap_mac: info.ap_mac,
            stations,
        })
    }

    pub fn access_points(&self) -> Vec<ApId> {
        (0..self.net.aps.len() as u32)
            .map(ApId)
            .filter(|ap| self.net.aps[ap.0 as usize].open)
            .collect()
    }

    pub fn send(
        &mut self,
        src: NodeId,
        dst: Destination,
        msg: ProtocolMessage,
        channel: Channel,
    ) -> Result<(), NetError> {
        self.net.send(src, dst, msg, channel)
    }

    pub fn attach_sniffer(&mut self, filter: SnifferFilter) -> SnifferId {
        self.net.sniffers.push((filter, Vec::new()));
        SnifferId(self.net.sniffers.len() - 1)
    }

    pub fn sniffed(&self, id: SnifferId) -> Vec<&TraceRecord> {
        self.net.sniffers[id.0]
            .1
            .iter()
            .map(|&i| &self.net.trace[i])
            .collect()
    }

    pub fn set_drop_hook(&mut self, hook: Option<DropHook>) {
        self.net.drop_hook = hook;
    }

    pub fn shutdown(&mut self) {
        self.net.shut_down = true;
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.net.trace
    }

    pub fn record(&self, seq: u64) -> Option<&TraceRecord> {
        self.net.trace.get(seq as usize)
    }

    pub fn trace_len(&self) -> u64 {
        self.net.trace.len() as u64
    }

    pub fn write_trace<W: Write>(&self, out: W) -> io::Result<()> {
        write_trace(&self.net.trace, out)
    }

    /// Let idle time pass.
    pub fn advance(&mut self, dt: u64) {
        self.net.now += dt;
    }

    pub fn pending(&self) -> usize {
        self.net.queue.len()
    }

    /// Deliver everything queued, including whatever handlers send in turn.
    pub fn run_until_idle(&mut self) -> u64 {
        while let Some(step) = self.net.step() {
            if let Some((dst, delivery)) = step {
                self.dispatch(dst, delivery);
            }
        }
        self.net.now
    }

    fn dispatch(&mut self, dst: NodeId, delivery: Delivery) {
        let Some(mut actor) = self.actors[dst.0 as usize].take() else {
            return;
        };
        let mut ctx = Ctx {
            net: &mut self.net,
            me: dst,
        };
        actor.on_message(&mut ctx, delivery);
        self.actors[dst.0 as usize] = Some(actor);
    }

    pub fn actor<T: Actor>(&self, id: NodeId) -> Result<&T, NetError> {
        let actor = self
            .actors
            .get(id.0 as usize)
            .and_then(|a| a.as_deref())
            .ok_or(NetError::ActorType(id))?;
        (actor as &dyn Any)
            .downcast_ref::<T>()
            .ok_or(NetError::ActorType(id))
    }

    /// Run `f` against the actor on `id` with a live context, at the
    /// current virtual time. Messages it sends are queued, not delivered.
    pub fn invoke<T: Actor, R>(
        &mut self,
        id: NodeId,
        f: impl FnOnce(&mut T, &mut Ctx<'_>) -> R,
    ) -> Result<R, NetError> {
        let slot = self
            .actors
            .get_mut(id.0 as usize)
            .ok_or_else(|| NetError::Address(format!("unknown node {id}")))?;
        let mut actor = slot.take().ok_or(NetError::ActorType(id))?;
        let result = match (actor.as_mut() as &mut dyn Any).downcast_mut::<T>() {
            Some(typed) => {
                let mut ctx = Ctx {
                    net: &mut self.net,
                    me: id,
                };
                Ok(f(typed, &mut ctx))
            }
            None => Err(NetError::ActorType(id)),
        };
        self.actors[id.0 as usize] = Some(actor);
        result
    }
}
