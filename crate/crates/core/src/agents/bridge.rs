//! Bridge node: the gateway's peer on the payment network. Forwards HTLCs
//! to their destination and reports the outcome back.

use std::collections::BTreeMap;

use super::messages::{ChannelId, Message, ProtocolMessage};
use super::{Agent, AgentError, AgentId, Ctx};
use crate::chain::{OutPoint, Transaction, Txid};
use crate::channel::{
    build_commitments, build_confiscation, build_mutual_close, Channel, ChannelParams, ChannelState, Htlc,
    RevocationPoints, RevocationReveal, RevocationSeed, Side, Update,
};
use crate::crypto::{verify, KeyPair, PublicKey, SecretKey, Signature};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgeConfig {
    pub accept_channels: bool,
    /// Confiscate revoked gateway commitments seen on chain.
    pub watch: bool,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig { accept_channels: true, watch: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BridgePhase {
    Idle,
    Opening,
    Operational,
    AwaitGatewayRevoke,
    Closing,
    Closed,
}

#[derive(Debug)]
pub struct Bridge {
    keys: KeyPair,
    seed: RevocationSeed,
    pub config: BridgeConfig,
    phase: BridgePhase,
    proposal: Option<ChannelParams>,
    channel: Option<Channel>,
    channel_id: ChannelId,
    gateway_points: BTreeMap<u64, PublicKey>,
    staged: Vec<Update>,
    to_forward: Vec<Htlc>,
    sent_locked: bool,
    gateway_locked: bool,
    close_tx: Option<Transaction>,
    awaiting_close: bool,
    /// Confiscation transactions this bridge submitted.
    pub confiscations: Vec<Txid>,
}

impl Bridge {
    pub fn new(keys: KeyPair, seed: RevocationSeed, config: BridgeConfig) -> Self {
        Bridge {
            keys,
            seed,
            config,
            phase: BridgePhase::Idle,
            proposal: None,
            channel: None,
            channel_id: ChannelId::UNSET,
            gateway_points: BTreeMap::new(),
            staged: Vec::new(),
            to_forward: Vec::new(),
            sent_locked: false,
            gateway_locked: false,
            close_tx: None,
            awaiting_close: false,
            confiscations: Vec::new(),
        }
    }

    pub fn public(&self) -> PublicKey {
        self.keys.public
    }

    pub fn phase(&self) -> BridgePhase {
        self.phase
    }

    pub fn channel(&self) -> Option<&Channel> {
        self.channel.as_ref()
    }

    pub fn revocation_seed(&self) -> &RevocationSeed {
        &self.seed
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    /// Broadcasts the latest bridge-held commitment with all signatures.
    pub fn close_unilaterally(&mut self, cx: &mut Ctx<'_>) -> Option<Txid> {
        let ch = self.channel.as_mut()?;
        let n = ch.latest().state_index;
        ch.sign_commitment(n, Side::Bridge, &self.keys).ok()?;
        let tx = ch.signed_commitment(n, Side::Bridge).ok()?;
        let txid = cx.chain.submit_tx(tx).ok()?;
        self.phase = BridgePhase::Closing;
        self.awaiting_close = true;
        Some(txid)
    }

    fn send(&self, body: ProtocolMessage, cx: &mut Ctx<'_>) {
        let name = body.name();
        cx.send(AgentId::Gateway, name, Message::new(self.channel_id, body).to_bytes());
    }

    fn error(&self, reason: &str, cx: &mut Ctx<'_>) {
        self.send(ProtocolMessage::Error { reason: reason.into() }, cx);
    }

    fn violation(&self, body: &ProtocolMessage) -> AgentError {
        AgentError::ProtocolViolation(format!("{} while {:?}", body.name(), self.phase))
    }

    fn reset(&mut self) {
        self.phase = BridgePhase::Idle;
        self.proposal = None;
        self.channel = None;
        self.channel_id = ChannelId::UNSET;
        self.sent_locked = false;
        self.gateway_locked = false;
    }

    fn on_open(&mut self, body: ProtocolMessage, cx: &mut Ctx<'_>) {
        let ProtocolMessage::OpenChannel {
            capacity,
            iot_pub,
            gateway_pub,
            to_self_delay,
            htlc_timeout,
            fee_percent,
            first_points,
        } = body
        else {
            unreachable!("dispatched on variant")
        };
        if !self.config.accept_channels {
            return self.error("bridge_rejected", cx);
        }
        let params = ChannelParams {
            capacity,
            iot_pub,
            gateway_pub,
            bridge_pub: self.keys.public,
            to_self_delay_k: to_self_delay,
            htlc_timeout_w: htlc_timeout,
            gateway_fee_percent: fee_percent,
            confirmation_depth: cx.chain.params().confirmation_depth,
            onchain_fee: cx.chain.params().onchain_fee,
        };
        if params.validate().is_err() {
            return self.error("invalid_params", cx);
        }
        self.proposal = Some(params);
        self.gateway_points = BTreeMap::from([(0, first_points[0]), (1, first_points[1])]);
        self.send(
            ProtocolMessage::AcceptChannel {
                bridge_pub: self.keys.public,
                first_points: [self.seed.point(0), self.seed.point(1)],
            },
            cx,
        );
        self.phase = BridgePhase::Opening;
    }

    fn on_funding_created(&mut self, funding: OutPoint, signature: Signature, cx: &mut Ctx<'_>) {
        let params = self.proposal.clone().expect("proposal accepted");
        self.channel_id = ChannelId::from_funding(&funding.txid);
        let points = RevocationPoints { gateway: self.gateway_points[&0], bridge: self.seed.point(0) };
        let initial = ChannelState::initial(&params, points);
        let gateway = params.gateway_pub;
        let mut ch = match Channel::new(params, funding, initial) {
            Ok(ch) => ch,
            Err(_) => {
                self.error("invalid_params", cx);
                return self.reset();
            }
        };
        if ch.add_signature(0, Side::Bridge, gateway, signature).is_err() {
            self.error("signature_invalid", cx);
            return self.reset();
        }
        let signature = ch.sign_commitment(0, Side::Gateway, &self.keys).expect("state 0 exists");
        self.channel = Some(ch);
        self.send(ProtocolMessage::FundingSignedPeer { signature }, cx);
    }

    fn maybe_operational(&mut self) {
        if self.sent_locked && self.gateway_locked && self.phase == BridgePhase::Opening {
            self.phase = BridgePhase::Operational;
        }
    }

    fn on_commitment_signed(&mut self, signatures: Vec<(PublicKey, Signature)>, cx: &mut Ctx<'_>) {
        let ch = self.channel.as_ref().expect("operational");
        let params = ch.params().clone();
        let n = ch.latest().state_index;
        let Some(gw_point) = self.gateway_points.get(&(n + 1)) else {
            return self.error("missing_revocation_point", cx);
        };
        let points = RevocationPoints { gateway: *gw_point, bridge: self.seed.point(n + 1) };
        let next = match ch.latest().advance(&params, &self.staged, cx.chain.height(), points) {
            Ok(s) => s,
            Err(_) => {
                self.staged.retain(|u| !matches!(u, Update::AddHtlc(_)));
                return self.error("invalid_update", cx);
            }
        };
        let pair = build_commitments(&params, ch.funding(), &next).expect("conservation checked");
        let txid = pair.bridge_held.txid();
        let sig_of =
            |pk: PublicKey| signatures.iter().find(|(k, s)| *k == pk && verify(&txid.0, s, k)).map(|(_, s)| *s);
        let (Some(gw_sig), Some(dev_sig)) = (sig_of(params.gateway_pub), sig_of(params.iot_pub)) else {
            return self.error("signature_invalid", cx);
        };

        let added: Vec<Htlc> = self
            .staged
            .iter()
            .filter_map(|u| match u {
                Update::AddHtlc(h) => Some(h.clone()),
                _ => None,
            })
            .collect();
        let ch = self.channel.as_mut().expect("operational");
        let m = next.state_index;
        ch.push_state(next).expect("validated");
        ch.add_signature(m, Side::Bridge, params.gateway_pub, gw_sig).expect("verified");
        ch.add_signature(m, Side::Bridge, params.iot_pub, dev_sig).expect("verified");
        ch.sign_commitment(m, Side::Bridge, &self.keys).expect("state exists");
        let own = ch.sign_commitment(m, Side::Gateway, &self.keys).expect("state exists");
        let reveal = ch.revoke_state(Side::Bridge, n, &self.seed).expect("previous state exists");
        self.staged.clear();
        self.to_forward = added;
        self.send(
            ProtocolMessage::RevokeAndAck { state_index: n, secret: reveal.secret, next_point: self.seed.point(m + 1) },
            cx,
        );
        self.send(ProtocolMessage::CommitmentSigned { signatures: vec![(self.keys.public, own)] }, cx);
        self.phase = BridgePhase::AwaitGatewayRevoke;
    }

    fn on_gateway_revoke(
        &mut self,
        state_index: u64,
        secret: SecretKey,
        next_point: PublicKey,
        cx: &mut Ctx<'_>,
    ) -> Result<(), AgentError> {
        let ch = self.channel.as_mut().expect("operational");
        ch.record_reveal(RevocationReveal { side: Side::Gateway, state_index, secret })
            .map_err(|e| AgentError::ProtocolViolation(e.to_string()))?;
        self.gateway_points.insert(state_index + 2, next_point);
        self.phase = BridgePhase::Operational;
        for htlc in std::mem::take(&mut self.to_forward) {
            match cx.pay_invoice(&htlc.payment_hash, htlc.value) {
                Some(preimage) => {
                    self.staged.push(Update::Settle(preimage));
                    self.send(ProtocolMessage::UpdateFulfillHtlc { id: htlc.id, preimage }, cx);
                }
                None => {
                    self.staged.push(Update::Fail { id: htlc.id });
                    self.send(ProtocolMessage::UpdateFailHtlc { id: htlc.id, reason: "destination_failed".into() }, cx);
                }
            }
        }
        Ok(())
    }

    fn on_shutdown(&mut self, cx: &mut Ctx<'_>) {
        let ch = self.channel.as_ref().expect("operational");
        let settled = if self.staged.is_empty() {
            Ok(ch.latest().clone())
        } else {
            ch.latest().advance(ch.params(), &self.staged, cx.chain.height(), ch.latest().revocation)
        };
        match settled.and_then(|s| build_mutual_close(ch.params(), ch.funding(), &s)) {
            Ok(tx) => {
                self.close_tx = Some(tx);
                self.phase = BridgePhase::Closing;
                self.send(ProtocolMessage::Shutdown, cx);
            }
            Err(_) => self.error("pending_htlcs", cx),
        }
    }

    fn on_closing_signed(&mut self, signatures: Vec<(PublicKey, Signature)>, cx: &mut Ctx<'_>) {
        let params = self.channel.as_ref().expect("closing").params().clone();
        let tx = self.close_tx.clone().expect("built at shutdown");
        let txid = tx.txid();
        let ok = |pk: PublicKey| signatures.iter().any(|(k, s)| *k == pk && verify(&txid.0, s, k));
        if !ok(params.gateway_pub) || !ok(params.iot_pub) {
            self.phase = BridgePhase::Operational;
            return self.error("signature_invalid", cx);
        }
        let own = tx.signature(&self.keys);
        self.awaiting_close = true;
        self.send(ProtocolMessage::ClosingSigned { signatures: vec![(self.keys.public, own)] }, cx);
    }

    fn check_funding_spent(&mut self, cx: &mut Ctx<'_>) {
        let Some(ch) = &self.channel else { return };
        let Some(spender) = cx.chain.spent_by(&ch.funding()).copied() else { return };
        if !cx.chain.is_confirmed(&spender) {
            return;
        }
        if self.config.watch {
            if let Some((n, Side::Gateway)) = ch.identify_commitment(&spender) {
                if let (Some(reveal), Some(tx)) = (ch.revealed(Side::Gateway, n), cx.chain.find_tx(&spender)) {
                    let fee = ch.params().onchain_fee;
                    if let Some(justice) = build_confiscation(tx, &reveal.keypair(), &self.keys, fee) {
                        if let Ok(txid) = cx.chain.submit_tx(justice) {
                            self.confiscations.push(txid);
                        }
                    }
                }
            }
        }
        self.phase = BridgePhase::Closed;
    }
}

impl Agent for Bridge {
    fn handle(&mut self, from: AgentId, bytes: &[u8], cx: &mut Ctx<'_>) -> Result<(), AgentError> {
        if from != AgentId::Gateway {
            return Err(AgentError::ProtocolViolation(format!("unexpected sender {from}")));
        }
        let msg = Message::from_bytes(bytes)?;
        if self.channel.is_some() && msg.channel_id != self.channel_id {
            return Err(AgentError::ProtocolViolation("message for another channel".into()));
        }
        use BridgePhase as P;
        use ProtocolMessage as M;
        match (self.phase, msg.body) {
            (P::Idle, body @ M::OpenChannel { .. }) => self.on_open(body, cx),
            (P::Opening, M::FundingCreated { txid, vout, signature }) if self.channel.is_none() => {
                self.on_funding_created(OutPoint { txid, vout }, signature, cx)
            }
            (P::Opening, M::FundingLocked) => {
                self.gateway_locked = true;
                self.maybe_operational();
            }
            (P::Opening, M::Error { .. }) => self.reset(),
            (P::Operational, M::UpdateAddHtlc { id, value, fee, payment_hash, expiry }) => {
                self.staged.push(Update::AddHtlc(Htlc { id, value, fee, payment_hash, expiry }))
            }
            (P::Operational, M::UpdateFailHtlc { id, .. }) => {
                let before = self.staged.len();
                self.staged.retain(|u| !matches!(u, Update::AddHtlc(h) if h.id == id));
                if self.staged.len() == before {
                    return Err(AgentError::ProtocolViolation(format!("no uncommitted HTLC {id}")));
                }
            }
            (P::Operational, M::CommitmentSigned { signatures }) => self.on_commitment_signed(signatures, cx),
            (P::AwaitGatewayRevoke, M::RevokeAndAck { state_index, secret, next_point }) => {
                self.on_gateway_revoke(state_index, secret, next_point, cx)?
            }
            (P::Operational, M::Shutdown) => self.on_shutdown(cx),
            (P::Closing, M::ClosingSigned { signatures }) => self.on_closing_signed(signatures, cx),
            (P::Closing, M::Error { .. }) => {
                self.close_tx = None;
                self.phase = P::Operational;
            }
            (_, M::Error { .. }) => {}
            (_, body) => return Err(self.violation(&body)),
        }
        Ok(())
    }

    fn on_block(&mut self, cx: &mut Ctx<'_>) {
        match self.phase {
            BridgePhase::Opening => {
                let Some(ch) = &self.channel else { return };
                let depth = u64::from(ch.params().confirmation_depth);
                if !self.sent_locked && cx.chain.confirmations(&ch.funding().txid).unwrap_or(0) >= depth {
                    self.sent_locked = true;
                    self.send(ProtocolMessage::FundingLocked, cx);
                    self.maybe_operational();
                }
            }
            BridgePhase::Idle | BridgePhase::Closed => {}
            _ => self.check_funding_spent(cx),
        }
    }

    fn wants_blocks(&self) -> bool {
        match self.phase {
            BridgePhase::Opening => self.channel.is_some() && !self.sent_locked,
            BridgePhase::Closing => self.awaiting_close,
            _ => false,
        }
    }
}
