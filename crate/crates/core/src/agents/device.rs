//! Constrained IoT device. Holds only its keys, certificate, the gateway's
//! public key, a channel id and session keys. Never stores transactions.

use serde_json::json;

use super::messages::{ChannelId, Message, ProtocolMessage};
use super::{Agent, AgentError, AgentId, Ctx};
use crate::chain::{SpendCondition, Transaction};
use crate::crypto::{
    open_envelope, seal_envelope, Certificate, Envelope, KeyPair, OpenPolicy, PublicKey, ReplayGuard, SessionKeys,
    DEFAULT_FRESHNESS_WINDOW_MS, DEFAULT_REPLAY_CAPACITY,
};
use crate::Amount;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceConfig {
    pub sign_funding: bool,
    pub sign_commitments: bool,
    pub freshness_window_ms: u64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig { sign_funding: true, sign_commitments: true, freshness_window_ms: DEFAULT_FRESHNESS_WINDOW_MS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DevicePhase {
    Idle,
    Opening,
    Operational,
    Paying,
    Closing,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeviceEvent {
    Opened(ChannelId),
    OpenRejected(String),
    PaymentSucceeded,
    PaymentFailed(String),
    Closed,
    Error(String),
}

#[derive(Debug)]
pub struct Device {
    keys: KeyPair,
    cert: Certificate,
    gateway_pub: PublicKey,
    channel_id: ChannelId,
    session: SessionKeys,
    default_destination: String,
    pending_capacity: Amount,
    phase: DevicePhase,
    replay: ReplayGuard,
    pub config: DeviceConfig,
    pub events: Vec<DeviceEvent>,
}

impl Device {
    pub fn new(
        keys: KeyPair,
        cert: Certificate,
        gateway_pub: PublicKey,
        session: SessionKeys,
        default_destination: String,
        config: DeviceConfig,
    ) -> Self {
        Device {
            keys,
            cert,
            gateway_pub,
            channel_id: ChannelId::UNSET,
            session,
            default_destination,
            pending_capacity: Amount::ZERO,
            phase: DevicePhase::Idle,
            replay: ReplayGuard::new(config.freshness_window_ms, DEFAULT_REPLAY_CAPACITY),
            config,
            events: Vec::new(),
        }
    }

    pub fn public(&self) -> PublicKey {
        self.keys.public
    }

    pub fn phase(&self) -> DevicePhase {
        self.phase
    }

    pub fn channel_id(&self) -> ChannelId {
        self.channel_id
    }

    pub fn session(&self) -> &SessionKeys {
        &self.session
    }

    pub fn cert(&self) -> &Certificate {
        &self.cert
    }

    /// Everything the device keeps across events, as JSON.
    pub fn persistent_state(&self) -> serde_json::Value {
        json!({
            "public_key": self.keys.public.to_hex(),
            "secret_key": self.keys.secret.to_hex(),
            "certificate": hex::encode(self.cert.to_bytes()),
            "gateway_pub": self.gateway_pub.to_hex(),
            "channel_id": self.channel_id.to_hex(),
            "session_enc": hex::encode(self.session.enc),
            "session_mac": hex::encode(self.session.mac),
            "default_destination": self.default_destination,
        })
    }

    /// Seals `body` for the gateway under the device session.
    pub fn seal(&self, body: ProtocolMessage, cx: &mut Ctx<'_>) -> Vec<u8> {
        let msg = Message::new(self.channel_id, body);
        seal_envelope(&msg.to_bytes(), &self.session, &self.gateway_pub, cx.now_ms, Some(&self.cert), cx.rng)
            .expect("gateway key is a valid curve point")
            .to_bytes()
    }

    fn send(&self, body: ProtocolMessage, cx: &mut Ctx<'_>) {
        let name = body.name();
        let bytes = self.seal(body, cx);
        cx.send(AgentId::Gateway, name, bytes);
    }

    pub fn start_open(&mut self, capacity: Amount, cx: &mut Ctx<'_>) -> bool {
        if self.phase != DevicePhase::Idle {
            return false;
        }
        self.pending_capacity = capacity;
        self.phase = DevicePhase::Opening;
        self.send(ProtocolMessage::OpenChannelRequest { capacity }, cx);
        true
    }

    pub fn start_payment(&mut self, amount: Amount, destination: Option<&str>, cx: &mut Ctx<'_>) -> bool {
        if self.phase != DevicePhase::Operational {
            return false;
        }
        let destination = destination.unwrap_or(&self.default_destination).to_string();
        self.phase = DevicePhase::Paying;
        self.send(ProtocolMessage::SendPayment { amount, destination }, cx);
        true
    }

    pub fn start_close(&mut self, cx: &mut Ctx<'_>) -> bool {
        if self.phase != DevicePhase::Operational {
            return false;
        }
        self.phase = DevicePhase::Closing;
        self.send(ProtocolMessage::CloseChannelRequest, cx);
        true
    }

    /// The funding transaction must pay exactly the requested capacity into a
    /// 3-of-3 that includes the device key, with any other output back to it.
    fn funding_looks_right(&self, tx: &Transaction) -> bool {
        let mut funding_outputs = 0;
        for out in &tx.outputs {
            match &out.condition {
                SpendCondition::MultiSig { threshold: 3, pubkeys }
                    if pubkeys.len() == 3 && pubkeys.contains(&self.keys.public) =>
                {
                    if out.value != self.pending_capacity {
                        return false;
                    }
                    funding_outputs += 1;
                }
                c if c.single_key() == Some(&self.keys.public) => {}
                _ => return false,
            }
        }
        funding_outputs == 1
    }

    fn sign_all(&self, txs: Vec<Transaction>) -> Vec<Transaction> {
        txs.into_iter()
            .map(|mut tx| {
                tx.sign_all_inputs(&self.keys);
                tx
            })
            .collect()
    }

    fn violation(&self, body: &ProtocolMessage) -> AgentError {
        AgentError::ProtocolViolation(format!("{} while {:?}", body.name(), self.phase))
    }
}

impl Agent for Device {
    fn handle(&mut self, from: AgentId, bytes: &[u8], cx: &mut Ctx<'_>) -> Result<(), AgentError> {
        if from != AgentId::Gateway {
            return Err(AgentError::ProtocolViolation(format!("unexpected sender {from}")));
        }
        let env = Envelope::from_bytes(bytes)?;
        let policy = OpenPolicy { freshness_window_ms: self.config.freshness_window_ms, trusted_issuer: None };
        let opened = open_envelope(&env, &self.keys.secret, cx.now_ms, &policy)?;
        if opened.session != self.session {
            return Err(AgentError::ProtocolViolation("reply not under the device session".into()));
        }
        self.replay.check_and_insert(&opened.mac, opened.timestamp_ms, cx.now_ms)?;
        let msg = Message::from_bytes(&opened.payload)?;

        use DevicePhase as P;
        use ProtocolMessage as M;
        match (self.phase, msg.body) {
            (P::Opening, M::OpenChannelAccepted) => {}
            (P::Opening, M::OpenChannelRejected { reason }) => {
                self.phase = P::Idle;
                self.events.push(DeviceEvent::OpenRejected(reason));
            }
            (P::Opening, M::FundingSignature { unsigned_funding_tx }) => {
                if !self.funding_looks_right(&unsigned_funding_tx) {
                    return Err(AgentError::ProtocolViolation("funding transaction does not match request".into()));
                }
                let mut tx = unsigned_funding_tx;
                if self.config.sign_funding {
                    tx.sign_all_inputs(&self.keys);
                }
                self.send(M::FundingSigned { signed_funding_tx: tx }, cx);
            }
            (P::Opening, M::ChannelOpened { channel_id }) => {
                self.channel_id = channel_id;
                self.phase = P::Operational;
                self.events.push(DeviceEvent::Opened(channel_id));
            }
            (P::Paying | P::Closing | P::Operational, M::RequestSignTx { txs }) => {
                if !self.config.sign_commitments {
                    // Withholding the signature stalls the flow at the gateway.
                    return Ok(());
                }
                if self.phase == P::Operational {
                    // Gateway-initiated unilateral close.
                    self.phase = P::Closing;
                }
                let txs = self.sign_all(txs);
                self.send(M::SignedTx { txs }, cx);
            }
            (P::Paying, M::PaymentSuccess) => {
                self.phase = P::Operational;
                self.events.push(DeviceEvent::PaymentSucceeded);
            }
            (P::Paying, M::PaymentFailure { reason }) => {
                self.phase = P::Operational;
                self.events.push(DeviceEvent::PaymentFailed(reason));
            }
            (P::Operational | P::Paying | P::Closing, M::ChannelClosed) => {
                self.phase = P::Closed;
                self.events.push(DeviceEvent::Closed);
            }
            (phase, M::Error { reason }) => {
                self.phase = match phase {
                    P::Opening => P::Idle,
                    P::Paying | P::Closing => P::Operational,
                    p => p,
                };
                self.events.push(DeviceEvent::Error(reason));
            }
            (_, body) => return Err(self.violation(&body)),
        }
        Ok(())
    }
}
