//! Emulation of a smart-plug cloud protocol, its known attacks, and the
//! traffic and firmware triage utilities used to analyze it.

pub mod actors;
pub mod analysis;
pub mod attacks;
pub mod cli;
pub mod crypto;
pub mod messages;
pub mod scenario;
pub mod simnet;
pub mod testbed;
