//! Protocol agents (device, gateway, bridge, destination stub) and the
//! deterministic world that wires them to the chain over a message bus.

mod bridge;
mod bus;
mod device;
mod gateway;
pub mod messages;
mod world;

use std::collections::BTreeMap;

use rand::RngCore;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bridge::{Bridge, BridgeConfig, BridgePhase};
pub use bus::{Bus, Delivery, LinkDelays, TranscriptEntry};
pub use device::{Device, DeviceConfig, DeviceEvent, DevicePhase};
pub use gateway::{Gateway, GatewayConfig, GatewayPhase};
pub use messages::{ChannelId, Message, ProtocolMessage};
pub use world::{Agents, Payouts, World, WorldConfig, BLOCK_INTERVAL_MS};

use crate::chain::Chain;
use crate::crypto::{new_preimage, EnvelopeError, PaymentHash, Preimage};
use crate::wire::DecodeError;
use crate::Amount;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentId {
    Device,
    Gateway,
    Bridge,
}

impl std::fmt::Display for AgentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AgentId::Device => "device",
            AgentId::Gateway => "gateway",
            AgentId::Bridge => "bridge",
        })
    }
}

/// Why an agent refused an inbound message. The message has no effect.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("authentication failed: {0}")]
    AuthFailure(EnvelopeError),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
}

impl From<EnvelopeError> for AgentError {
    fn from(e: EnvelopeError) -> Self {
        AgentError::AuthFailure(e)
    }
}

impl From<DecodeError> for AgentError {
    fn from(e: DecodeError) -> Self {
        AgentError::ProtocolViolation(format!("undecodable message: {e}"))
    }
}

/// Outcome of a device-driven flow that did not succeed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlowError {
    #[error("gateway rejected the request: {0}")]
    GatewayRejected(String),
    #[error("bridge rejected the channel")]
    BridgeRejected,
    #[error("a required signature is missing or invalid")]
    SignatureInvalid,
    #[error("funding did not reach the required depth")]
    ConfirmationTimeout,
    #[error("payment exceeds the channel balance")]
    InsufficientChannelBalance,
    #[error("device declined to sign")]
    DeviceDeclinedSignature,
    #[error("bridge did not respond")]
    BridgeUnresponsive,
    #[error("HTLCs still pending")]
    PendingHtlcs,
    #[error("flow stopped without an outcome")]
    Stalled,
    #[error("device is not in a state to start this flow")]
    WrongPhase,
}

impl FlowError {
    pub fn reason(&self) -> &'static str {
        match self {
            FlowError::GatewayRejected(_) => "gateway_rejected",
            FlowError::BridgeRejected => "bridge_rejected",
            FlowError::SignatureInvalid => "signature_invalid",
            FlowError::ConfirmationTimeout => "confirmation_timeout",
            FlowError::InsufficientChannelBalance => "insufficient_channel_balance",
            FlowError::DeviceDeclinedSignature => "device_declined_signature",
            FlowError::BridgeUnresponsive => "bridge_unresponsive",
            FlowError::PendingHtlcs => "pending_htlcs",
            FlowError::Stalled => "stalled",
            FlowError::WrongPhase => "wrong_phase",
        }
    }

    /// Maps a reason string carried in a failure message back to the error.
    pub fn from_reason(reason: &str) -> Self {
        match reason {
            "bridge_rejected" => FlowError::BridgeRejected,
            "signature_invalid" => FlowError::SignatureInvalid,
            "confirmation_timeout" => FlowError::ConfirmationTimeout,
            "insufficient_channel_balance" => FlowError::InsufficientChannelBalance,
            "device_declined_signature" => FlowError::DeviceDeclinedSignature,
            "bridge_unresponsive" => FlowError::BridgeUnresponsive,
            "pending_htlcs" => FlowError::PendingHtlcs,
            other => FlowError::GatewayRejected(other.to_string()),
        }
    }
}

/// Payee stub: issues invoices and reveals the preimage when paid.
#[derive(Debug, Clone, Default)]
pub struct Destination {
    invoices: BTreeMap<PaymentHash, (Preimage, Amount)>,
    received: Amount,
    paid: Vec<(PaymentHash, Preimage)>,
    /// When false, incoming HTLCs are refused.
    pub online: bool,
}

impl Destination {
    pub fn new() -> Self {
        Destination { online: true, ..Default::default() }
    }

    pub fn invoice(&mut self, amount: Amount, rng: &mut ChaCha20Rng) -> PaymentHash {
        let (preimage, hash) = new_preimage(rng);
        self.invoices.insert(hash, (preimage, amount));
        hash
    }

    /// Accepts `value` against the invoice for `hash`, returning the preimage.
    pub fn pay(&mut self, hash: &PaymentHash, value: Amount) -> Option<Preimage> {
        if !self.online {
            return None;
        }
        let (preimage, amount) = *self.invoices.get(hash)?;
        if value < amount {
            return None;
        }
        self.invoices.remove(hash);
        self.received += value;
        self.paid.push((*hash, preimage));
        Some(preimage)
    }

    pub fn received(&self) -> Amount {
        self.received
    }

    pub fn knows_preimage(&self, hash: &PaymentHash) -> Option<Preimage> {
        self.paid.iter().find(|(h, _)| h == hash).map(|(_, p)| *p)
    }

    /// Preimages revealed so far, i.e. known to whoever forwarded the payments.
    pub fn preimages(&self) -> impl Iterator<Item = Preimage> + '_ {
        self.paid.iter().map(|(_, p)| *p)
    }
}

/// Everything besides its own state that an agent may touch while handling
/// one event. Outbound messages are collected and put on the bus afterwards.
pub struct Ctx<'a> {
    pub now_ms: u64,
    pub chain: &'a mut Chain,
    pub rng: &'a mut ChaCha20Rng,
    pub destinations: &'a mut BTreeMap<String, Destination>,
    out: Vec<Outgoing>,
}

#[derive(Debug, Clone)]
pub struct Outgoing {
    pub to: AgentId,
    pub name: &'static str,
    pub bytes: Vec<u8>,
}

impl<'a> Ctx<'a> {
    pub fn new(
        now_ms: u64,
        chain: &'a mut Chain,
        rng: &'a mut ChaCha20Rng,
        destinations: &'a mut BTreeMap<String, Destination>,
    ) -> Self {
        Ctx { now_ms, chain, rng, destinations, out: Vec::new() }
    }

    pub fn send(&mut self, to: AgentId, name: &'static str, bytes: Vec<u8>) {
        self.out.push(Outgoing { to, name, bytes });
    }

    pub fn take_outgoing(&mut self) -> Vec<Outgoing> {
        std::mem::take(&mut self.out)
    }

    pub fn random_bytes<const N: usize>(&mut self) -> [u8; N] {
        let mut b = [0u8; N];
        self.rng.fill_bytes(&mut b);
        b
    }

    /// Pays the invoice for `hash` at whichever destination issued it.
    pub fn pay_invoice(&mut self, hash: &PaymentHash, value: Amount) -> Option<Preimage> {
        self.destinations.values_mut().find_map(|d| d.pay(hash, value))
    }
}

/// Event-driven protocol participant.
pub trait Agent {
    fn handle(&mut self, from: AgentId, bytes: &[u8], cx: &mut Ctx<'_>) -> Result<(), AgentError>;
    /// Called after every mined block while the agent is online.
    fn on_block(&mut self, _cx: &mut Ctx<'_>) {}
    /// Called when nothing is in flight. Returns true if the agent acted.
    fn on_stall(&mut self, _cx: &mut Ctx<'_>) -> bool {
        false
    }
    /// Whether the agent is waiting on chain progress.
    fn wants_blocks(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bridge directory is empty")]
pub struct EmptyDirectory;

/// Picks the node with the most channels; ties go to the smallest id.
pub fn select_bridge(directory: &[(String, u32)]) -> Result<&str, EmptyDirectory> {
    directory
        .iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        .map(|(id, _)| id.as_str())
        .ok_or(EmptyDirectory)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir(entries: &[(&str, u32)]) -> Vec<(String, u32)> {
        entries.iter().map(|(n, c)| (n.to_string(), *c)).collect()
    }

    #[test]
    fn select_bridge_rules() {
        assert_eq!(select_bridge(&dir(&[("A", 5), ("B", 9)])), Ok("B"));
        assert_eq!(select_bridge(&dir(&[("B", 5), ("A", 5)])), Ok("A"));
        assert_eq!(select_bridge(&dir(&[("solo", 0)])), Ok("solo"));
        assert_eq!(select_bridge(&[]), Err(EmptyDirectory));
    }

    #[test]
    fn reasons_round_trip() {
        for e in [
            FlowError::BridgeRejected,
            FlowError::SignatureInvalid,
            FlowError::ConfirmationTimeout,
            FlowError::InsufficientChannelBalance,
            FlowError::DeviceDeclinedSignature,
            FlowError::BridgeUnresponsive,
            FlowError::PendingHtlcs,
        ] {
            assert_eq!(FlowError::from_reason(e.reason()), e);
        }
        assert_eq!(
            FlowError::from_reason("insufficient_funds"),
            FlowError::GatewayRejected("insufficient_funds".into())
        );
    }

    #[test]
    fn destination_pays_once() {
        use rand::SeedableRng;
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut d = Destination::new();
        let h = d.invoice(Amount::from_sat(100), &mut rng);
        assert!(d.pay(&h, Amount::from_sat(99)).is_none());
        let p = d.pay(&h, Amount::from_sat(100)).unwrap();
        assert_eq!(p.hash(), h);
        assert!(d.pay(&h, Amount::from_sat(100)).is_none());
        assert_eq!(d.received(), Amount::from_sat(100));
    }
}
