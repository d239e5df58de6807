//! A ready-made home network around one victim plug and phone, with the
//! vendor's HTTPS and TURN servers on the public side.

use std::net::SocketAddrV4;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::actors::{
    HttpsServer, PhoneError, PlugError, PlugPhase, SmartPlug, Smartphone, TurnServer, HTTPS_PORT,
    TURN_PORT,
};
use crate::messages::{
    ApInfo, DeviceIdentity, LocalAction, MacAddr, PlugStatus, SwitchAction, WifiCredentials,
};
use crate::simnet::{ApId, Attachment, NetError, NodeId, Sim};

/// A Belkin OUI block.
pub const BELKIN_OUI: [u8; 3] = [0xEC, 0x1A, 0x59];
/// OUI of an unrelated vendor, used for neighbour devices.
pub const OTHER_OUI: [u8; 3] = [0x00, 0x17, 0x88];

pub const VICTIM_PHONE_ID: &str = "phone-0001";
pub const NEIGHBOUR_SSID: &str = "home-2200";
pub const CELLULAR_SSID: &str = "cellular";

#[derive(Debug, Error)]
pub enum TestbedError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Plug(#[from] PlugError),
    #[error(transparent)]
    Phone(#[from] PhoneError),
    #[error("expectation failed: {0}")]
    Expectation(String),
}

pub type Result<T> = std::result::Result<T, TestbedError>;

pub(crate) fn expect(cond: bool, what: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(TestbedError::Expectation(what.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestbedConfig {
    pub seed: u64,
    pub patched: bool,
    pub vendor_oui: [u8; 3],
    pub home_ssid: String,
    pub passphrase: String,
}

impl TestbedConfig {
    pub fn new(seed: u64) -> Self {
        TestbedConfig {
            seed,
            patched: false,
            vendor_oui: BELKIN_OUI,
            home_ssid: "NETGEAR00".into(),
            passphrase: "correct horse".into(),
        }
    }

    pub fn patched(mut self, patched: bool) -> Self {
        self.patched = patched;
        self
    }
}

/// Topology: servers on public addresses, the victim's home router, a
/// neighbour's router with a non-vendor device, and a cellular network the
/// victim's phone moves to when away from home.
pub struct Testbed {
    pub sim: Sim,
    pub config: TestbedConfig,
    pub https: NodeId,
    pub turn: NodeId,
    pub https_addr: SocketAddrV4,
    pub turn_addr: SocketAddrV4,
    pub home: ApId,
    pub neighbour: ApId,
    pub cellular: ApId,
    pub plug: NodeId,
    pub phone: NodeId,
}

fn mac(prefix: [u8; 3], rng: &mut ChaCha8Rng) -> MacAddr {
    let tail: [u8; 3] = rng.random();
    MacAddr([prefix[0], prefix[1], prefix[2], tail[0], tail[1], tail[2]])
}

impl Testbed {
    pub fn new(config: TestbedConfig) -> Result<Self> {
        // Hardware addresses come from their own stream so that topology
        // choices never shift the protocol's random draws.
        let mut hw = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_4a4d);
        let mut sim = Sim::new(config.seed);

        let https = sim.add_actor(
            "https",
            mac([0x02, 0x00, 0x01], &mut hw),
            Attachment::Public,
            HttpsServer::new(config.patched),
        )?;
        sim.set_port(https, HTTPS_PORT)?;
        let turn = sim.add_actor(
            "turn",
            mac([0x02, 0x00, 0x02], &mut hw),
            Attachment::Public,
            TurnServer::new(https),
        )?;
        sim.set_port(turn, TURN_PORT)?;
        sim.invoke::<HttpsServer, _>(https, |s, _| s.set_turn(turn))?;
        let https_addr = sim.public_addr(https)?;
        let turn_addr = sim.public_addr(turn)?;

        let home = sim.add_router(&config.home_ssid, mac([0x00, 0x1e, 0x2a], &mut hw));
        let neighbour = sim.add_router(NEIGHBOUR_SSID, mac([0x00, 0x24, 0x01], &mut hw));
        let cellular = sim.add_router(CELLULAR_SSID, mac([0x02, 0x00, 0x03], &mut hw));
        sim.add_node(
            "neighbour-bridge",
            mac(OTHER_OUI, &mut hw),
            Attachment::Lan(neighbour),
        )?;

        let plug_mac = mac(config.vendor_oui, &mut hw);
        let identity = DeviceIdentity::genuine(plug_mac, "WeMo Switch");
        let plug = sim.add_actor(
            "plug",
            plug_mac,
            Attachment::Detached,
            SmartPlug::new(identity, https_addr, turn_addr),
        )?;

        let survey = sim.survey(home)?;
        let wifi = WifiCredentials {
            ap: ApInfo {
                ssid: survey.ssid,
                ap_mac: survey.ap_mac,
            },
            passphrase: config.passphrase.clone(),
        };
        let phone_app =
            Smartphone::new(VICTIM_PHONE_ID, "Pixel 3", https_addr).with_home_wifi(wifi);
        let phone = sim.add_actor(
            "phone",
            mac([0x3c, 0x28, 0x6d], &mut hw),
            Attachment::Lan(home),
            phone_app,
        )?;

        Ok(Testbed {
            sim,
            config,
            https,
            turn,
            https_addr,
            turn_addr,
            home,
            neighbour,
            cellular,
            plug,
            phone,
        })
    }

    pub fn plug_state(&self) -> &SmartPlug {
        self.sim.actor::<SmartPlug>(self.plug).expect("victim plug")
    }

    pub fn phone_state(&self) -> &Smartphone {
        self.sim
            .actor::<Smartphone>(self.phone)
            .expect("victim phone")
    }

    pub fn server(&self) -> &HttpsServer {
        self.sim
            .actor::<HttpsServer>(self.https)
            .expect("https server")
    }

    pub fn turn_state(&self) -> &TurnServer {
        self.sim
            .actor::<TurnServer>(self.turn)
            .expect("turn server")
    }

    pub fn serial(&self) -> String {
        self.plug_state().identity().serial.clone()
    }

    /// Plug opens its soft AP, the phone joins it and hands over the home
    /// network; the plug then joins the home router.
    pub fn pair(&mut self) -> Result<()> {
        let soft_ap = self
            .sim
            .invoke::<SmartPlug, _>(self.plug, |p, ctx| p.enter_ap_mode(ctx))??;
        self.sim.leave_lans(self.phone)?;
        self.sim.join_lan(self.phone, soft_ap)?;
        let plug = self.plug;
        self.sim
            .invoke::<Smartphone, _>(self.phone, |p, ctx| p.pair(ctx, plug))??;
        self.sim.run_until_idle();
        expect(
            self.plug_state().phase() == PlugPhase::Paired,
            "plug paired",
        )
    }

    /// Binding, local phone-key delivery, and the TURN allocation that
    /// follows it.
    pub fn bind(&mut self) -> Result<()> {
        self.sim
            .invoke::<SmartPlug, _>(self.plug, |p, ctx| p.start_bind(ctx))??;
        self.sim.run_until_idle();
        expect(
            self.plug_state().phase() == PlugPhase::Online,
            "plug online",
        )?;
        expect(
            self.phone_state().phone_key().is_some(),
            "phone received its key",
        )
    }

    /// Pair and bind, then take the phone away from home.
    pub fn setup(&mut self) -> Result<()> {
        self.pair()?;
        self.bind()?;
        self.phone_leaves_home()
    }

    pub fn phone_leaves_home(&mut self) -> Result<()> {
        self.sim.leave_lans(self.phone)?;
        self.sim.join_lan(self.phone, self.cellular)?;
        Ok(())
    }

    /// One periodic status sync from the victim plug.
    pub fn plug_sync(&mut self) -> Result<()> {
        self.sim
            .invoke::<SmartPlug, _>(self.plug, |p, ctx| p.sync_status(ctx))??;
        self.sim.run_until_idle();
        Ok(())
    }

    /// The victim plug asks TURN for a fresh allocation.
    pub fn plug_reallocate(&mut self) -> Result<()> {
        self.sim
            .invoke::<SmartPlug, _>(self.plug, |p, ctx| p.request_relay(ctx))??;
        self.sim.run_until_idle();
        Ok(())
    }

    pub fn query(&mut self, phone: NodeId) -> Result<Option<PlugStatus>> {
        let before = self.sim.actor::<Smartphone>(phone)?.statuses().len();
        self.sim
            .invoke::<Smartphone, _>(phone, |p, ctx| p.query_status(ctx))??;
        self.sim.run_until_idle();
        let app = self.sim.actor::<Smartphone>(phone)?;
        Ok(app.statuses().get(before).map(|(_, s)| *s))
    }

    /// Remote command from `phone`; returns whether the server acked it.
    pub fn control(&mut self, phone: NodeId, action: SwitchAction) -> Result<bool> {
        let before = self.sim.actor::<Smartphone>(phone)?.control_acks().len();
        self.sim
            .invoke::<Smartphone, _>(phone, |p, ctx| p.control(ctx, action))??;
        self.sim.run_until_idle();
        Ok(self.sim.actor::<Smartphone>(phone)?.control_acks().len() > before)
    }

    pub fn control_local(
        &mut self,
        phone: NodeId,
        action: LocalAction,
    ) -> Result<Option<PlugStatus>> {
        let before = self.sim.actor::<Smartphone>(phone)?.local_acks().len();
        let plug = self.plug;
        self.sim
            .invoke::<Smartphone, _>(phone, |p, ctx| p.control_local(ctx, plug, action))??;
        self.sim.run_until_idle();
        let app = self.sim.actor::<Smartphone>(phone)?;
        Ok(app.local_acks().get(before).map(|(_, s)| *s))
    }

    /// Let virtual time pass with nothing on the wire.
    pub fn idle(&mut self, dt: u64) {
        self.sim.advance(dt);
    }
}
