//! Gateway: holds the channel on the device's behalf, talks to the bridge
//! and asks the device only for signatures.

use std::collections::BTreeMap;

use super::messages::{ChannelId, Message, ProtocolMessage};
use super::{select_bridge, Agent, AgentError, AgentId, Ctx};
use crate::chain::{OutPoint, Transaction, Txid};
use crate::channel::{
    build_commitments, build_confiscation, build_funding_tx, build_mutual_close, Channel, ChannelError, ChannelParams,
    ChannelState, CommitmentPair, RevocationPoints, RevocationReveal, RevocationSeed, Side, Update,
};
use crate::crypto::{
    open_envelope, seal_envelope, verify, Envelope, KeyPair, OpenPolicy, PublicKey, ReplayGuard, SessionKeys,
    Signature, DEFAULT_FRESHNESS_WINDOW_MS, DEFAULT_REPLAY_CAPACITY,
};
use crate::Amount;

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub fee_percent: u32,
    pub to_self_delay_k: u32,
    pub htlc_timeout_w: u64,
    /// Blocks after broadcast before an unconfirmed funding is abandoned.
    pub confirmation_timeout_blocks: u64,
    pub freshness_window_ms: u64,
    pub cert_issuer: PublicKey,
    /// Known bridge nodes with their channel counts.
    pub directory: Vec<(String, u32)>,
    /// Confiscate revoked bridge commitments seen on chain.
    pub watch: bool,
}

impl GatewayConfig {
    pub fn new(cert_issuer: PublicKey) -> Self {
        GatewayConfig {
            fee_percent: 10,
            to_self_delay_k: 6,
            htlc_timeout_w: 144,
            confirmation_timeout_blocks: 15,
            freshness_window_ms: DEFAULT_FRESHNESS_WINDOW_MS,
            cert_issuer,
            directory: vec![("bridge".to_string(), 1)],
            watch: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatewayPhase {
    Idle,
    AwaitAccept,
    AwaitFundingSigned,
    AwaitDeviceFunding,
    AwaitDepth,
    AwaitBridgeLocked,
    Operational,
    AwaitDevicePaySig,
    AwaitRevoke,
    AwaitCommitment,
    AwaitFulfill,
    AwaitShutdown,
    AwaitDeviceCloseSig,
    AwaitClosingSigned,
    AwaitUnilateralSig,
    AwaitCloseConfirmation,
    Closed,
}

#[derive(Debug, Clone)]
struct PendingPayment {
    next: ChannelState,
    pair: CommitmentPair,
    htlc_id: u64,
    device_sigs: Option<[Signature; 2]>,
    bridge_reveal: Option<RevocationReveal>,
}

#[derive(Debug)]
pub struct Gateway {
    keys: KeyPair,
    seed: RevocationSeed,
    pub config: GatewayConfig,
    phase: GatewayPhase,
    device_pub: Option<PublicKey>,
    session: Option<SessionKeys>,
    replay: ReplayGuard,
    channel_id: ChannelId,
    selected_bridge: Option<String>,
    capacity: Amount,
    wallet: Option<(OutPoint, Amount)>,
    funding_tx: Option<Transaction>,
    broadcast_height: u64,
    sent_locked: bool,
    bridge_locked: bool,
    channel: Option<Channel>,
    bridge_points: BTreeMap<u64, PublicKey>,
    staged: Vec<Update>,
    pending: Option<PendingPayment>,
    /// HTLC committed in the latest state whose outcome the device awaits.
    awaiting_htlc: Option<u64>,
    close_tx: Option<Transaction>,
    device_close_sig: Option<Signature>,
    /// Confiscation transactions this gateway submitted.
    pub confiscations: Vec<Txid>,
}

impl Gateway {
    pub fn new(keys: KeyPair, seed: RevocationSeed, config: GatewayConfig) -> Self {
        let replay = ReplayGuard::new(config.freshness_window_ms, DEFAULT_REPLAY_CAPACITY);
        Gateway {
            keys,
            seed,
            config,
            phase: GatewayPhase::Idle,
            device_pub: None,
            session: None,
            replay,
            channel_id: ChannelId::UNSET,
            selected_bridge: None,
            capacity: Amount::ZERO,
            wallet: None,
            funding_tx: None,
            broadcast_height: 0,
            sent_locked: false,
            bridge_locked: false,
            channel: None,
            bridge_points: BTreeMap::new(),
            staged: Vec::new(),
            pending: None,
            awaiting_htlc: None,
            close_tx: None,
            device_close_sig: None,
            confiscations: Vec::new(),
        }
    }

    pub fn public(&self) -> PublicKey {
        self.keys.public
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn phase(&self) -> GatewayPhase {
        self.phase
    }

    pub fn channel(&self) -> Option<&Channel> {
        self.channel.as_ref()
    }

    pub fn selected_bridge(&self) -> Option<&str> {
        self.selected_bridge.as_deref()
    }

    pub fn staged(&self) -> &[Update] {
        &self.staged
    }

    pub fn revocation_seed(&self) -> &RevocationSeed {
        &self.seed
    }

    pub fn close_tx(&self) -> Option<&Transaction> {
        self.close_tx.as_ref()
    }

    fn send_device(&self, body: ProtocolMessage, cx: &mut Ctx<'_>) {
        let (Some(device), Some(session)) = (&self.device_pub, &self.session) else {
            return;
        };
        let name = body.name();
        let msg = Message::new(self.channel_id, body);
        let env = seal_envelope(&msg.to_bytes(), session, device, cx.now_ms, None, cx.rng)
            .expect("device key is a valid curve point");
        cx.send(AgentId::Device, name, env.to_bytes());
    }

    fn send_bridge(&self, body: ProtocolMessage, cx: &mut Ctx<'_>) {
        let name = body.name();
        cx.send(AgentId::Bridge, name, Message::new(self.channel_id, body).to_bytes());
    }

    fn violation(&self, body: &ProtocolMessage) -> AgentError {
        AgentError::ProtocolViolation(format!("{} while {:?}", body.name(), self.phase))
    }

    fn ch(&self) -> &Channel {
        self.channel.as_ref().expect("channel exists past funding")
    }

    fn points(&self, index: u64) -> Option<RevocationPoints> {
        Some(RevocationPoints { gateway: self.seed.point(index), bridge: *self.bridge_points.get(&index)? })
    }

    /// Authenticates a device envelope. The session is fixed by the first
    /// accepted open request; later envelopes must reuse it.
    fn open_device(&mut self, bytes: &[u8], now_ms: u64) -> Result<Message, AgentError> {
        let env = Envelope::from_bytes(bytes)?;
        let policy = OpenPolicy {
            freshness_window_ms: self.config.freshness_window_ms,
            trusted_issuer: Some(self.config.cert_issuer),
        };
        let opened = open_envelope(&env, &self.keys.secret, now_ms, &policy)?;
        let subject = opened.cert.as_ref().map(|c| c.subject).expect("policy requires a certificate");
        if let Some(device) = &self.device_pub {
            if *device != subject {
                return Err(AgentError::ProtocolViolation("certificate for another device".into()));
            }
        }
        let binding_session = self.phase == GatewayPhase::Idle;
        if !binding_session && self.session.as_ref() != Some(&opened.session) {
            return Err(AgentError::ProtocolViolation("envelope outside the device session".into()));
        }
        self.replay.check_and_insert(&opened.mac, opened.timestamp_ms, now_ms)?;
        let msg = Message::from_bytes(&opened.payload)?;
        if binding_session {
            if !matches!(msg.body, ProtocolMessage::OpenChannelRequest { .. }) {
                return Err(AgentError::ProtocolViolation(format!("{} before open", msg.body.name())));
            }
            self.device_pub = Some(subject);
            self.session = Some(opened.session);
        }
        Ok(msg)
    }

    // ---- open ----

    fn begin_open(&mut self, capacity: Amount, cx: &mut Ctx<'_>) {
        let device = self.device_pub.expect("set with the session");
        let need = capacity + cx.chain.params().onchain_fee;
        let wallet = cx
            .chain
            .utxos_for(&device)
            .into_iter()
            .map(|(op, u)| (op, u.output.value))
            .max_by_key(|(op, v)| (*v, std::cmp::Reverse(*op)));
        let reject = match wallet {
            _ if capacity.is_zero() => Some("invalid_params"),
            Some((_, v)) if v >= need && v != capacity => None,
            _ => Some("insufficient_funds"),
        };
        if let Some(reason) = reject {
            self.send_device(ProtocolMessage::OpenChannelRejected { reason: reason.into() }, cx);
            return;
        }
        let bridge = match select_bridge(&self.config.directory) {
            Ok(b) => b.to_string(),
            Err(_) => {
                self.send_device(ProtocolMessage::OpenChannelRejected { reason: "no_bridge".into() }, cx);
                return;
            }
        };
        self.selected_bridge = Some(bridge);
        self.capacity = capacity;
        self.wallet = wallet;
        self.send_device(ProtocolMessage::OpenChannelAccepted, cx);
        self.send_bridge(
            ProtocolMessage::OpenChannel {
                capacity,
                iot_pub: device,
                gateway_pub: self.keys.public,
                to_self_delay: self.config.to_self_delay_k,
                htlc_timeout: self.config.htlc_timeout_w,
                fee_percent: self.config.fee_percent,
                first_points: [self.seed.point(0), self.seed.point(1)],
            },
            cx,
        );
        self.phase = GatewayPhase::AwaitAccept;
    }

    fn on_accept(&mut self, bridge_pub: PublicKey, first_points: [PublicKey; 2], cx: &mut Ctx<'_>) {
        let params = ChannelParams {
            capacity: self.capacity,
            iot_pub: self.device_pub.expect("set at open"),
            gateway_pub: self.keys.public,
            bridge_pub,
            to_self_delay_k: self.config.to_self_delay_k,
            htlc_timeout_w: self.config.htlc_timeout_w,
            gateway_fee_percent: self.config.fee_percent,
            confirmation_depth: cx.chain.params().confirmation_depth,
            onchain_fee: cx.chain.params().onchain_fee,
        };
        let (utxo, value) = self.wallet.expect("checked at open");
        let funding = match build_funding_tx(&params, utxo, value) {
            Ok(tx) => tx,
            Err(_) => return self.abort_open("insufficient_funds", cx),
        };
        self.bridge_points = BTreeMap::from([(0, first_points[0]), (1, first_points[1])]);
        let initial = ChannelState::initial(&params, self.points(0).expect("just inserted"));
        let mut channel = match Channel::new(params, funding.outpoint(0), initial) {
            Ok(c) => c,
            Err(_) => return self.abort_open("invalid_params", cx),
        };
        let signature = channel.sign_commitment(0, Side::Bridge, &self.keys).expect("state 0 exists");
        self.channel_id = ChannelId::from_funding(&funding.txid());
        self.send_bridge(ProtocolMessage::FundingCreated { txid: funding.txid(), vout: 0, signature }, cx);
        self.channel = Some(channel);
        self.funding_tx = Some(funding);
        self.phase = GatewayPhase::AwaitFundingSigned;
    }

    fn on_device_funding(&mut self, tx: Transaction, cx: &mut Ctx<'_>) {
        let expected = self.funding_tx.as_ref().expect("sent to device").txid();
        let height = cx.chain.height();
        let ok = tx.strip_witnesses().txid() == expected
            && cx.chain.validate_spend(&tx, height + 1).is_ok()
            && cx.chain.submit_tx(tx).is_ok();
        if !ok {
            return self.abort_open("signature_invalid", cx);
        }
        self.broadcast_height = height;
        self.phase = GatewayPhase::AwaitDepth;
    }

    fn finish_open(&mut self, cx: &mut Ctx<'_>) {
        self.phase = GatewayPhase::Operational;
        self.send_device(ProtocolMessage::ChannelOpened { channel_id: self.channel_id }, cx);
    }

    fn abort_open(&mut self, reason: &str, cx: &mut Ctx<'_>) {
        if !matches!(self.phase, GatewayPhase::Idle | GatewayPhase::AwaitAccept) {
            self.send_bridge(ProtocolMessage::Error { reason: reason.into() }, cx);
        }
        self.send_device(ProtocolMessage::OpenChannelRejected { reason: reason.into() }, cx);
        self.phase = GatewayPhase::Idle;
        self.channel = None;
        self.funding_tx = None;
        self.channel_id = ChannelId::UNSET;
        self.sent_locked = false;
        self.bridge_locked = false;
    }

    // ---- payment ----

    fn begin_payment(&mut self, amount: Amount, destination: String, cx: &mut Ctx<'_>) {
        let ch = self.ch();
        let params = ch.params().clone();
        let latest = ch.latest().clone();
        let Some(points) = self.points(latest.state_index + 1) else {
            return self.send_device(ProtocolMessage::PaymentFailure { reason: "bridge_unresponsive".into() }, cx);
        };
        let fee = params.fee_for(amount);
        let Some(dest) = cx.destinations.get_mut(&destination) else {
            return self.send_device(ProtocolMessage::PaymentFailure { reason: "unknown_destination".into() }, cx);
        };
        let payment_hash = dest.invoice(amount.saturating_sub(fee), cx.rng);
        let mut updates = self.staged.clone();
        updates.push(Update::Add { amount, payment_hash });
        let next = match latest.advance(&params, &updates, cx.chain.height(), points) {
            Ok(s) => s,
            Err(e) => {
                let reason = match e {
                    ChannelError::InsufficientChannelBalance { .. } => "insufficient_channel_balance",
                    ChannelError::ZeroAmount => "zero_amount",
                    _ => "invalid_payment",
                };
                return self.send_device(ProtocolMessage::PaymentFailure { reason: reason.into() }, cx);
            }
        };
        let htlc = next.htlc_for(&payment_hash).expect("just added").clone();
        let pair = build_commitments(&params, ch.funding(), &next).expect("state conserves capacity");
        self.send_bridge(
            ProtocolMessage::UpdateAddHtlc {
                id: htlc.id,
                value: htlc.value,
                fee: htlc.fee,
                payment_hash,
                expiry: htlc.expiry,
            },
            cx,
        );
        self.send_device(
            ProtocolMessage::RequestSignTx { txs: vec![pair.gateway_held.clone(), pair.bridge_held.clone()] },
            cx,
        );
        self.pending = Some(PendingPayment { next, pair, htlc_id: htlc.id, device_sigs: None, bridge_reveal: None });
        self.phase = GatewayPhase::AwaitDevicePaySig;
    }

    /// Device signature on each of `txs`, which must be `expected` plus witnesses.
    fn device_sigs(&self, txs: &[Transaction], expected: &[&Transaction]) -> Option<Vec<Signature>> {
        let device = self.device_pub?;
        if txs.len() != expected.len() {
            return None;
        }
        txs.iter()
            .zip(expected)
            .map(|(tx, want)| {
                let txid = want.txid();
                let sig = *tx.inputs.first()?.witness.signature_of(&device)?;
                (tx.strip_witnesses().txid() == txid && verify(&txid.0, &sig, &device)).then_some(sig)
            })
            .collect()
    }

    fn on_payment_sigs(&mut self, txs: Vec<Transaction>, cx: &mut Ctx<'_>) {
        let p = self.pending.as_ref().expect("pending while awaiting signatures");
        let Some(sigs) = self.device_sigs(&txs, &[&p.pair.gateway_held, &p.pair.bridge_held]) else {
            return self.fail_payment("signature_invalid", cx);
        };
        let own = p.pair.bridge_held.signature(&self.keys);
        let device = self.device_pub.expect("set at open");
        self.send_bridge(
            ProtocolMessage::CommitmentSigned { signatures: vec![(self.keys.public, own), (device, sigs[1])] },
            cx,
        );
        self.pending.as_mut().expect("checked").device_sigs = Some([sigs[0], sigs[1]]);
        self.phase = GatewayPhase::AwaitRevoke;
    }

    fn on_bridge_revoke(
        &mut self,
        state_index: u64,
        secret: crate::crypto::SecretKey,
        next_point: PublicKey,
    ) -> Result<(), AgentError> {
        let latest = self.ch().latest();
        let reveal = RevocationReveal { side: Side::Bridge, state_index, secret };
        if state_index != latest.state_index || reveal.keypair().public != latest.revocation.bridge {
            return Err(AgentError::ProtocolViolation("revocation does not open the current bridge point".into()));
        }
        self.bridge_points.insert(state_index + 2, next_point);
        self.pending.as_mut().expect("pending payment").bridge_reveal = Some(reveal);
        self.phase = GatewayPhase::AwaitCommitment;
        Ok(())
    }

    fn on_bridge_commitment(
        &mut self,
        signatures: Vec<(PublicKey, Signature)>,
        cx: &mut Ctx<'_>,
    ) -> Result<(), AgentError> {
        let bridge = self.ch().params().bridge_pub;
        let p = self.pending.as_ref().expect("pending payment");
        let txid = p.pair.gateway_held.txid();
        let Some(bsig) = signatures.iter().find(|(pk, s)| *pk == bridge && verify(&txid.0, s, pk)).map(|(_, s)| *s)
        else {
            return Err(AgentError::ProtocolViolation("commitment signature does not verify".into()));
        };
        let p = self.pending.take().expect("checked");
        let device = self.device_pub.expect("set at open");
        let [dsig_gw, dsig_br] = p.device_sigs.expect("collected before commitment_signed");
        let n = p.next.state_index;
        let ch = self.channel.as_mut().expect("channel exists");
        ch.push_state(p.next).expect("validated when built");
        ch.add_signature(n, Side::Gateway, device, dsig_gw).expect("verified");
        ch.add_signature(n, Side::Gateway, bridge, bsig).expect("verified");
        ch.add_signature(n, Side::Bridge, device, dsig_br).expect("verified");
        ch.sign_commitment(n, Side::Gateway, &self.keys).expect("state exists");
        ch.sign_commitment(n, Side::Bridge, &self.keys).expect("state exists");
        ch.record_reveal(p.bridge_reveal.expect("revoke precedes commitment")).expect("checked on receipt");
        let own = ch.revoke_state(Side::Gateway, n - 1, &self.seed).expect("previous state exists");
        self.staged.clear();
        self.send_bridge(
            ProtocolMessage::RevokeAndAck {
                state_index: n - 1,
                secret: own.secret,
                next_point: self.seed.point(n + 1),
            },
            cx,
        );
        self.awaiting_htlc = Some(p.htlc_id);
        self.phase = GatewayPhase::AwaitFulfill;
        Ok(())
    }

    fn fail_payment(&mut self, reason: &str, cx: &mut Ctx<'_>) {
        if let Some(p) = self.pending.take() {
            if matches!(
                self.phase,
                GatewayPhase::AwaitDevicePaySig | GatewayPhase::AwaitRevoke | GatewayPhase::AwaitCommitment
            ) {
                self.send_bridge(ProtocolMessage::UpdateFailHtlc { id: p.htlc_id, reason: reason.into() }, cx);
            }
        }
        self.send_device(ProtocolMessage::PaymentFailure { reason: reason.into() }, cx);
        self.phase = GatewayPhase::Operational;
    }

    fn on_resolution(&mut self, id: u64, update: Update, cx: &mut Ctx<'_>) -> Result<(), AgentError> {
        let Some(htlc) = self.ch().latest().pending_htlcs.iter().find(|h| h.id == id).cloned() else {
            return Err(AgentError::ProtocolViolation(format!("no pending HTLC {id}")));
        };
        if let Update::Settle(preimage) = &update {
            if preimage.hash() != htlc.payment_hash {
                return Err(AgentError::ProtocolViolation("preimage does not match HTLC".into()));
            }
        }
        let success = matches!(update, Update::Settle(_));
        self.staged.push(update);
        if self.phase == GatewayPhase::AwaitFulfill && self.awaiting_htlc == Some(id) {
            self.awaiting_htlc = None;
            self.phase = GatewayPhase::Operational;
            let body = if success {
                ProtocolMessage::PaymentSuccess
            } else {
                ProtocolMessage::PaymentFailure { reason: "destination_failed".into() }
            };
            self.send_device(body, cx);
        }
        Ok(())
    }

    // ---- close ----

    /// Latest state with staged resolutions folded in.
    fn settled_state(&self, height: u64) -> Result<ChannelState, ChannelError> {
        let ch = self.ch();
        if self.staged.is_empty() {
            return Ok(ch.latest().clone());
        }
        ch.latest().advance(ch.params(), &self.staged, height, ch.latest().revocation)
    }

    fn begin_mutual_close(&mut self, cx: &mut Ctx<'_>) {
        let tx = self
            .settled_state(cx.chain.height())
            .and_then(|s| build_mutual_close(self.ch().params(), self.ch().funding(), &s));
        match tx {
            Ok(tx) => {
                self.close_tx = Some(tx);
                self.send_bridge(ProtocolMessage::Shutdown, cx);
                self.phase = GatewayPhase::AwaitShutdown;
            }
            Err(ChannelError::PendingHtlcs(_)) => {
                self.send_device(ProtocolMessage::Error { reason: "pending_htlcs".into() }, cx)
            }
            Err(_) => self.send_device(ProtocolMessage::Error { reason: "invalid_state".into() }, cx),
        }
    }

    fn on_close_sig(&mut self, txs: Vec<Transaction>, cx: &mut Ctx<'_>) {
        let close = self.close_tx.clone().expect("built at close request");
        let Some(sigs) = self.device_sigs(&txs, &[&close]) else {
            return self.abort_close("signature_invalid", cx);
        };
        let device = self.device_pub.expect("set at open");
        let own = close.signature(&self.keys);
        self.device_close_sig = Some(sigs[0]);
        self.send_bridge(
            ProtocolMessage::ClosingSigned { signatures: vec![(self.keys.public, own), (device, sigs[0])] },
            cx,
        );
        self.phase = GatewayPhase::AwaitClosingSigned;
    }

    fn on_bridge_closing(&mut self, signatures: Vec<(PublicKey, Signature)>, cx: &mut Ctx<'_>) {
        let mut tx = self.close_tx.clone().expect("built at close request");
        let bridge = self.ch().params().bridge_pub;
        let device = self.device_pub.expect("set at open");
        for (pk, sig) in signatures.into_iter().filter(|(pk, _)| *pk == bridge) {
            tx.add_signature(0, pk, sig);
        }
        tx.add_signature(0, device, self.device_close_sig.expect("collected"));
        tx.sign_input(0, &self.keys);
        self.submit_close(tx, cx);
    }

    fn submit_close(&mut self, tx: Transaction, cx: &mut Ctx<'_>) {
        match cx.chain.submit_tx(tx.clone()) {
            Ok(_) => {
                self.close_tx = Some(tx);
                self.phase = GatewayPhase::AwaitCloseConfirmation;
            }
            Err(_) => self.abort_close("signature_invalid", cx),
        }
    }

    fn abort_close(&mut self, reason: &str, cx: &mut Ctx<'_>) {
        if matches!(self.phase, GatewayPhase::AwaitDeviceCloseSig | GatewayPhase::AwaitClosingSigned) {
            self.send_bridge(ProtocolMessage::Error { reason: reason.into() }, cx);
        }
        self.close_tx = None;
        self.device_close_sig = None;
        self.phase = GatewayPhase::Operational;
        self.send_device(ProtocolMessage::Error { reason: reason.into() }, cx);
    }

    /// Starts a unilateral close with the latest gateway-held commitment.
    pub fn start_unilateral_close(&mut self, cx: &mut Ctx<'_>) -> bool {
        if self.phase != GatewayPhase::Operational {
            return false;
        }
        let ch = self.ch();
        let tx = ch.commitments(ch.latest().state_index).expect("latest exists").gateway_held;
        self.send_device(ProtocolMessage::RequestSignTx { txs: vec![tx] }, cx);
        self.phase = GatewayPhase::AwaitUnilateralSig;
        true
    }

    fn on_unilateral_sig(&mut self, txs: Vec<Transaction>, cx: &mut Ctx<'_>) {
        let n = self.ch().latest().state_index;
        let unsigned = self.ch().commitments(n).expect("latest exists").gateway_held;
        let Some(sigs) = self.device_sigs(&txs, &[&unsigned]) else {
            return self.abort_close("signature_invalid", cx);
        };
        let device = self.device_pub.expect("set at open");
        let ch = self.channel.as_mut().expect("channel exists");
        ch.add_signature(n, Side::Gateway, device, sigs[0]).expect("verified");
        ch.sign_commitment(n, Side::Gateway, &self.keys).expect("latest exists");
        let tx = ch.signed_commitment(n, Side::Gateway).expect("latest exists");
        self.submit_close(tx, cx);
    }

    // ---- chain watching ----

    fn check_funding_spent(&mut self, cx: &mut Ctx<'_>) {
        let Some(ch) = &self.channel else { return };
        let Some(spender) = cx.chain.spent_by(&ch.funding()).copied() else { return };
        if !cx.chain.is_confirmed(&spender) {
            return;
        }
        if self.config.watch {
            if let Some((n, Side::Bridge)) = ch.identify_commitment(&spender) {
                if let (Some(reveal), Some(tx)) = (ch.revealed(Side::Bridge, n), cx.chain.find_tx(&spender)) {
                    let fee = ch.params().onchain_fee;
                    if let Some(justice) = build_confiscation(tx, &reveal.keypair(), &self.keys, fee) {
                        if let Ok(txid) = cx.chain.submit_tx(justice) {
                            self.confiscations.push(txid);
                        }
                    }
                }
            }
        }
        self.phase = GatewayPhase::Closed;
        self.send_device(ProtocolMessage::ChannelClosed, cx);
    }
}

impl Agent for Gateway {
    fn handle(&mut self, from: AgentId, bytes: &[u8], cx: &mut Ctx<'_>) -> Result<(), AgentError> {
        use GatewayPhase as P;
        use ProtocolMessage as M;
        match from {
            AgentId::Device => {
                let msg = self.open_device(bytes, cx.now_ms)?;
                match (self.phase, msg.body) {
                    (P::Idle, M::OpenChannelRequest { capacity }) => self.begin_open(capacity, cx),
                    (P::AwaitDeviceFunding, M::FundingSigned { signed_funding_tx }) => {
                        self.on_device_funding(signed_funding_tx, cx)
                    }
                    (P::Operational, M::SendPayment { amount, destination }) => {
                        self.begin_payment(amount, destination, cx)
                    }
                    (P::AwaitDevicePaySig, M::SignedTx { txs }) => self.on_payment_sigs(txs, cx),
                    (P::Operational, M::CloseChannelRequest) => self.begin_mutual_close(cx),
                    (P::AwaitDeviceCloseSig, M::SignedTx { txs }) => self.on_close_sig(txs, cx),
                    (P::AwaitUnilateralSig, M::SignedTx { txs }) => self.on_unilateral_sig(txs, cx),
                    (_, body) => return Err(self.violation(&body)),
                }
            }
            AgentId::Bridge => {
                let msg = Message::from_bytes(bytes)?;
                if msg.channel_id != self.channel_id {
                    return Err(AgentError::ProtocolViolation("message for another channel".into()));
                }
                match (self.phase, msg.body) {
                    (P::AwaitAccept, M::AcceptChannel { bridge_pub, first_points }) => {
                        self.on_accept(bridge_pub, first_points, cx)
                    }
                    (P::AwaitAccept | P::AwaitFundingSigned, M::Error { .. }) => self.abort_open("bridge_rejected", cx),
                    (P::AwaitFundingSigned, M::FundingSignedPeer { signature }) => {
                        let bridge = self.ch().params().bridge_pub;
                        let ch = self.channel.as_mut().expect("created with funding");
                        if ch.add_signature(0, Side::Gateway, bridge, signature).is_err() {
                            self.abort_open("signature_invalid", cx);
                        } else {
                            let unsigned_funding_tx = self.funding_tx.clone().expect("built");
                            self.send_device(M::FundingSignature { unsigned_funding_tx }, cx);
                            self.phase = P::AwaitDeviceFunding;
                        }
                    }
                    (P::AwaitDepth | P::AwaitBridgeLocked, M::FundingLocked) => {
                        self.bridge_locked = true;
                        if self.phase == P::AwaitBridgeLocked {
                            self.finish_open(cx);
                        }
                    }
                    (P::AwaitRevoke, M::RevokeAndAck { state_index, secret, next_point }) => {
                        self.on_bridge_revoke(state_index, secret, next_point)?
                    }
                    (P::AwaitCommitment, M::CommitmentSigned { signatures }) => {
                        self.on_bridge_commitment(signatures, cx)?
                    }
                    (P::AwaitFulfill | P::Operational, M::UpdateFulfillHtlc { id, preimage }) => {
                        self.on_resolution(id, Update::Settle(preimage), cx)?
                    }
                    (P::AwaitFulfill | P::Operational, M::UpdateFailHtlc { id, .. }) => {
                        self.on_resolution(id, Update::Fail { id }, cx)?
                    }
                    (P::AwaitDevicePaySig | P::AwaitRevoke | P::AwaitCommitment, M::Error { reason }) => {
                        self.fail_payment(&reason, cx)
                    }
                    (P::AwaitShutdown, M::Shutdown) => {
                        let tx = self.close_tx.clone().expect("built at close request");
                        self.send_device(M::RequestSignTx { txs: vec![tx] }, cx);
                        self.phase = P::AwaitDeviceCloseSig;
                    }
                    (P::AwaitClosingSigned, M::ClosingSigned { signatures }) => self.on_bridge_closing(signatures, cx),
                    (P::AwaitShutdown | P::AwaitClosingSigned, M::Error { reason }) => self.abort_close(&reason, cx),
                    (_, body) => return Err(self.violation(&body)),
                }
            }
            AgentId::Gateway => return Err(AgentError::ProtocolViolation("message from self".into())),
        }
        Ok(())
    }

    fn on_block(&mut self, cx: &mut Ctx<'_>) {
        use GatewayPhase as P;
        let height = cx.chain.height();
        let timed_out = height.saturating_sub(self.broadcast_height) > self.config.confirmation_timeout_blocks;
        match self.phase {
            P::AwaitDepth => {
                let txid = self.funding_tx.as_ref().expect("broadcast").txid();
                let depth = u64::from(self.ch().params().confirmation_depth);
                if cx.chain.confirmations(&txid).unwrap_or(0) >= depth {
                    self.sent_locked = true;
                    self.send_bridge(ProtocolMessage::FundingLocked, cx);
                    if self.bridge_locked {
                        self.finish_open(cx);
                    } else {
                        self.phase = P::AwaitBridgeLocked;
                    }
                } else if timed_out {
                    self.abort_open("confirmation_timeout", cx);
                }
                return;
            }
            P::AwaitBridgeLocked if timed_out => return self.abort_open("bridge_unresponsive", cx),
            P::AwaitCloseConfirmation => {
                let txid = self.close_tx.as_ref().expect("submitted").txid();
                if cx.chain.is_confirmed(&txid) {
                    self.phase = P::Closed;
                    self.send_device(ProtocolMessage::ChannelClosed, cx);
                }
                return;
            }
            P::Idle | P::AwaitAccept | P::AwaitFundingSigned | P::AwaitDeviceFunding | P::Closed => return,
            _ => {}
        }
        self.check_funding_spent(cx);
    }

    fn on_stall(&mut self, cx: &mut Ctx<'_>) -> bool {
        use GatewayPhase as P;
        match self.phase {
            P::AwaitAccept | P::AwaitFundingSigned => self.abort_open("bridge_rejected", cx),
            P::AwaitDeviceFunding => self.abort_open("device_declined_signature", cx),
            P::AwaitDevicePaySig => self.fail_payment("device_declined_signature", cx),
            P::AwaitRevoke | P::AwaitCommitment => self.fail_payment("bridge_unresponsive", cx),
            P::AwaitFulfill => {
                // HTLC stays committed; it resolves later by fulfil, fail or timeout.
                self.awaiting_htlc = None;
                self.phase = P::Operational;
                self.send_device(ProtocolMessage::PaymentFailure { reason: "bridge_unresponsive".into() }, cx);
            }
            P::AwaitShutdown | P::AwaitClosingSigned => self.abort_close("bridge_unresponsive", cx),
            P::AwaitDeviceCloseSig | P::AwaitUnilateralSig => self.abort_close("device_declined_signature", cx),
            _ => return false,
        }
        true
    }

    fn wants_blocks(&self) -> bool {
        matches!(
            self.phase,
            GatewayPhase::AwaitDepth | GatewayPhase::AwaitBridgeLocked | GatewayPhase::AwaitCloseConfirmation
        )
    }
}
