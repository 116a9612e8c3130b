use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::bridge::{Bridge, BridgeConfig};
use super::bus::{Bus, LinkDelays, TranscriptEntry};
use super::device::{Device, DeviceConfig, DeviceEvent};
use super::gateway::{Gateway, GatewayConfig};
use super::messages::ChannelId;
use super::{Agent, AgentError, AgentId, Ctx, Destination, FlowError};
use crate::chain::{Chain, ChainParams, SpendCondition, Transaction, Txid};
use crate::channel::RevocationSeed;
use crate::crypto::{Certificate, KeyPair, SessionKeys, DEFAULT_FRESHNESS_WINDOW_MS};
use crate::Amount;

/// Simulated wall-clock time per mined block.
pub const BLOCK_INTERVAL_MS: u64 = 600_000;

const ALL: [AgentId; 3] = [AgentId::Gateway, AgentId::Bridge, AgentId::Device];

#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub seed: u64,
    pub chain: ChainParams,
    pub device_wallet: Amount,
    pub to_self_delay_k: u32,
    pub htlc_timeout_w: u64,
    pub fee_percent: u32,
    pub confirmation_timeout_blocks: u64,
    pub freshness_window_ms: u64,
    pub delays: LinkDelays,
    pub device: DeviceConfig,
    pub bridge: BridgeConfig,
    pub gateway_watch: bool,
    pub directory: Vec<(String, u32)>,
    pub destination: String,
    /// Upper bound on blocks mined inside one [`World::run`].
    pub max_blocks_per_run: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let chain = ChainParams::default();
        WorldConfig {
            seed: 7,
            confirmation_timeout_blocks: u64::from(chain.confirmation_depth) + 12,
            chain,
            device_wallet: Amount::from_btc(20),
            to_self_delay_k: 6,
            htlc_timeout_w: 144,
            fee_percent: 10,
            freshness_window_ms: DEFAULT_FRESHNESS_WINDOW_MS,
            delays: LinkDelays::default(),
            device: DeviceConfig::default(),
            bridge: BridgeConfig::default(),
            gateway_watch: true,
            directory: vec![("bridge".to_string(), 1)],
            destination: "merchant".to_string(),
            max_blocks_per_run: 64,
        }
    }
}

/// The three protocol agents.
#[derive(Debug)]
pub struct Agents {
    pub device: Device,
    pub gateway: Gateway,
    pub bridge: Bridge,
}

impl Agents {
    fn get_mut(&mut self, id: AgentId) -> &mut dyn Agent {
        match id {
            AgentId::Device => &mut self.device,
            AgentId::Gateway => &mut self.gateway,
            AgentId::Bridge => &mut self.bridge,
        }
    }

    fn wants_blocks(&self, id: AgentId) -> bool {
        match id {
            AgentId::Device => self.device.wants_blocks(),
            AgentId::Gateway => self.gateway.wants_blocks(),
            AgentId::Bridge => self.bridge.wants_blocks(),
        }
    }
}

/// What each party ends up with from a closing transaction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Payouts {
    pub device: Amount,
    pub gateway: Amount,
    pub bridge: Amount,
}

impl Payouts {
    pub fn total(&self) -> Amount {
        self.device + self.gateway + self.bridge
    }
}

/// Chain, bus, agents and destinations under one deterministic RNG.
#[derive(Debug)]
pub struct World {
    pub chain: Chain,
    pub agents: Agents,
    pub destinations: BTreeMap<String, Destination>,
    pub errors: Vec<(AgentId, AgentError)>,
    rng: ChaCha20Rng,
    bus: Bus,
    suspended: BTreeMap<AgentId, u64>,
    issuer: KeyPair,
    config: WorldConfig,
}

impl World {
    pub fn new(config: WorldConfig) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let issuer = KeyPair::generate(&mut rng);
        let device_keys = KeyPair::generate(&mut rng);
        let gateway_keys = KeyPair::generate(&mut rng);
        let bridge_keys = KeyPair::generate(&mut rng);
        let gateway_seed = RevocationSeed::random(&mut rng);
        let bridge_seed = RevocationSeed::random(&mut rng);
        let session = SessionKeys::generate(&mut rng);
        let cert = Certificate::issue(device_keys.public, &issuer);

        let mut chain = Chain::new(config.chain);
        chain.allocate(device_keys.public, config.device_wallet);

        let device_config = DeviceConfig { freshness_window_ms: config.freshness_window_ms, ..config.device.clone() };
        let device =
            Device::new(device_keys, cert, gateway_keys.public, session, config.destination.clone(), device_config);
        let gateway_config = GatewayConfig {
            fee_percent: config.fee_percent,
            to_self_delay_k: config.to_self_delay_k,
            htlc_timeout_w: config.htlc_timeout_w,
            confirmation_timeout_blocks: config.confirmation_timeout_blocks,
            freshness_window_ms: config.freshness_window_ms,
            cert_issuer: issuer.public,
            directory: config.directory.clone(),
            watch: config.gateway_watch,
        };
        let gateway = Gateway::new(gateway_keys, gateway_seed, gateway_config);
        let bridge = Bridge::new(bridge_keys, bridge_seed, config.bridge.clone());

        World {
            chain,
            agents: Agents { device, gateway, bridge },
            destinations: BTreeMap::from([(config.destination.clone(), Destination::new())]),
            errors: Vec::new(),
            rng,
            bus: Bus::new(config.delays),
            suspended: BTreeMap::new(),
            issuer,
            config,
        }
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    /// Key that issued the device certificate.
    pub fn issuer(&self) -> &KeyPair {
        &self.issuer
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    pub fn now_ms(&self) -> u64 {
        self.bus.now_ms()
    }

    /// Runs `f` as agent `id`, then puts whatever it sent on the bus.
    pub fn with<R>(&mut self, id: AgentId, f: impl FnOnce(&mut Agents, &mut Ctx<'_>) -> R) -> R {
        let mut cx = Ctx::new(self.bus.now_ms(), &mut self.chain, &mut self.rng, &mut self.destinations);
        let r = f(&mut self.agents, &mut cx);
        for out in cx.take_outgoing() {
            self.bus.send(id, out);
        }
        r
    }

    pub fn is_suspended(&self, id: AgentId) -> bool {
        self.suspended.contains_key(&id)
    }

    /// Takes `id` offline until `blocks` more blocks are mined. Messages sent
    /// to it meanwhile are held and delivered on resume.
    pub fn suspend(&mut self, id: AgentId, blocks: u64) {
        self.suspended.insert(id, self.chain.height() + blocks);
    }

    pub fn resume(&mut self, id: AgentId) {
        if self.suspended.remove(&id).is_some() {
            self.bus.unpark(id);
        }
    }

    /// Delivers raw bytes to `to` as if sent by `from`, outside any flow.
    pub fn inject(&mut self, from: AgentId, to: AgentId, bytes: Vec<u8>) {
        self.bus.inject(from, to, bytes);
    }

    /// Delivers one message. Returns false when nothing is in flight.
    pub fn step(&mut self) -> bool {
        let Some(d) = self.bus.pop() else { return false };
        if self.is_suspended(d.to) {
            self.bus.park(d);
            return true;
        }
        let to = d.to;
        if let Err(e) = self.with(to, |a, cx| a.get_mut(to).handle(d.from, &d.bytes, cx)) {
            self.errors.push((to, e));
        }
        true
    }

    /// Delivers messages, mines while an agent waits on the chain and fires
    /// stall handlers until nothing more happens.
    pub fn run(&mut self) {
        let mut mined = 0;
        loop {
            if self.step() {
                continue;
            }
            let waiting = ALL.iter().any(|id| !self.is_suspended(*id) && self.agents.wants_blocks(*id));
            if waiting && mined < self.config.max_blocks_per_run {
                self.mine(1);
                mined += 1;
                continue;
            }
            let acted = ALL
                .iter()
                .filter(|id| !self.is_suspended(**id))
                .copied()
                .collect::<Vec<_>>()
                .into_iter()
                .any(|id| self.with(id, |a, cx| a.get_mut(id).on_stall(cx)));
            if !acted {
                break;
            }
        }
    }

    /// Mines `n` blocks one at a time, resuming agents whose suspension has
    /// ended and giving every online agent its block callback.
    pub fn mine(&mut self, n: u64) {
        for _ in 0..n {
            self.chain.mine_block(1).expect("mining one block");
            self.bus.advance_clock(BLOCK_INTERVAL_MS);
            let height = self.chain.height();
            let resumed: Vec<AgentId> =
                self.suspended.iter().filter(|(_, until)| **until <= height).map(|(id, _)| *id).collect();
            for id in resumed {
                self.resume(id);
            }
            for id in ALL {
                if !self.is_suspended(id) {
                    self.with(id, |a, cx| a.get_mut(id).on_block(cx));
                }
            }
        }
    }

    fn outcome<T>(
        &self,
        mark: usize,
        f: impl Fn(&DeviceEvent) -> Option<Result<T, FlowError>>,
    ) -> Result<T, FlowError> {
        self.agents.device.events[mark..].iter().find_map(f).unwrap_or(Err(FlowError::Stalled))
    }

    fn failure<T>(e: &DeviceEvent) -> Option<Result<T, FlowError>> {
        match e {
            DeviceEvent::OpenRejected(r) | DeviceEvent::PaymentFailed(r) | DeviceEvent::Error(r) => {
                Some(Err(FlowError::from_reason(r)))
            }
            _ => None,
        }
    }

    pub fn iot_open_channel(&mut self, capacity: Amount) -> Result<ChannelId, FlowError> {
        let mark = self.agents.device.events.len();
        if !self.with(AgentId::Device, |a, cx| a.device.start_open(capacity, cx)) {
            return Err(FlowError::WrongPhase);
        }
        self.run();
        self.outcome(mark, |e| match e {
            DeviceEvent::Opened(id) => Some(Ok(*id)),
            e => Self::failure(e),
        })
    }

    pub fn iot_send_payment(&mut self, amount: Amount, destination: Option<&str>) -> Result<(), FlowError> {
        let mark = self.agents.device.events.len();
        if !self.with(AgentId::Device, |a, cx| a.device.start_payment(amount, destination, cx)) {
            return Err(FlowError::WrongPhase);
        }
        self.run();
        self.outcome(mark, |e| match e {
            DeviceEvent::PaymentSucceeded => Some(Ok(())),
            e => Self::failure(e),
        })
    }

    /// Device-initiated cooperative close. Returns the closing txid.
    pub fn iot_close_channel(&mut self) -> Result<Txid, FlowError> {
        let mark = self.agents.device.events.len();
        if !self.with(AgentId::Device, |a, cx| a.device.start_close(cx)) {
            return Err(FlowError::WrongPhase);
        }
        self.run();
        self.closed_outcome(mark)
    }

    /// Gateway broadcasts its latest commitment after a device co-signature.
    pub fn gateway_close(&mut self) -> Result<Txid, FlowError> {
        let mark = self.agents.device.events.len();
        if !self.with(AgentId::Gateway, |a, cx| a.gateway.start_unilateral_close(cx)) {
            return Err(FlowError::WrongPhase);
        }
        self.run();
        self.closed_outcome(mark)
    }

    /// Bridge broadcasts its latest commitment.
    pub fn bridge_close(&mut self) -> Result<Txid, FlowError> {
        let mark = self.agents.device.events.len();
        if self.with(AgentId::Bridge, |a, cx| a.bridge.close_unilaterally(cx)).is_none() {
            return Err(FlowError::WrongPhase);
        }
        self.run();
        self.closed_outcome(mark)
    }

    fn closed_outcome(&self, mark: usize) -> Result<Txid, FlowError> {
        self.outcome(mark, |e| match e {
            DeviceEvent::Closed => Some(self.funding_spender().ok_or(FlowError::Stalled)),
            e => Self::failure(e),
        })
    }

    /// The transaction that spent the channel funding output, if any.
    pub fn funding_spender(&self) -> Option<Txid> {
        let funding = self.agents.gateway.channel()?.funding();
        self.chain.spent_by(&funding).copied()
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        self.bus.transcript()
    }

    /// Transcript lines from index `from` on, as `from->to name`.
    pub fn transcript_lines(&self, from: usize) -> Vec<String> {
        self.bus.transcript()[from..].iter().map(|e| e.to_string()).collect()
    }

    /// Splits a closing transaction's outputs among the parties. Delayed and
    /// revocable outputs count for their honest owner; an HTLC counts for the
    /// bridge once the destination has revealed its preimage, else the device.
    pub fn closing_payouts(&self, tx: &Transaction) -> Payouts {
        let ch = self.agents.gateway.channel().or(self.agents.bridge.channel()).expect("channel exists");
        let params = ch.params();
        let mut p = Payouts::default();
        for out in &tx.outputs {
            let owner = self.beneficiary(&out.condition);
            if owner == Some(params.iot_pub) {
                p.device += out.value;
            } else if owner == Some(params.gateway_pub) {
                p.gateway += out.value;
            } else if owner == Some(params.bridge_pub) {
                p.bridge += out.value;
            }
        }
        p
    }

    fn beneficiary(&self, c: &SpendCondition) -> Option<crate::crypto::PublicKey> {
        match c {
            SpendCondition::RelativeTimelock { inner, .. } | SpendCondition::AbsoluteTimelock { inner, .. } => {
                self.beneficiary(inner)
            }
            SpendCondition::HashLock { hash, inner } => {
                let paid = self.destinations.values().any(|d| d.knows_preimage(hash).is_some());
                if paid {
                    self.beneficiary(inner)
                } else {
                    None
                }
            }
            SpendCondition::Or(branches) => {
                let htlc = branches.iter().any(|b| matches!(b, SpendCondition::HashLock { .. }));
                if htlc {
                    branches.iter().find_map(|b| self.beneficiary(b))
                } else {
                    branches.first().and_then(|b| self.beneficiary(b))
                }
            }
            other => other.single_key().copied(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opened() -> World {
        let mut w = World::new(WorldConfig::default());
        w.iot_open_channel(Amount::from_btc(10)).unwrap();
        w
    }

    #[test]
    fn open_pay_close_happy_path() {
        let mut w = opened();
        assert_eq!(w.agents.gateway.channel().unwrap().latest().state_index, 0);
        w.iot_send_payment(Amount::from_btc(1), None).unwrap();
        w.iot_send_payment(Amount::from_btc(1), None).unwrap();
        assert_eq!(w.agents.gateway.channel().unwrap().latest().state_index, 2);
        assert_eq!(w.destinations["merchant"].received(), Amount::from_sat(180_000_000));
        let txid = w.iot_close_channel().unwrap();
        assert!(w.chain.is_confirmed(&txid));
        assert!(w.errors.is_empty(), "{:?}", w.errors);
    }

    #[test]
    fn payment_beyond_balance_fails_without_state_change() {
        let mut w = opened();
        let err = w.iot_send_payment(Amount::from_btc(11), None).unwrap_err();
        assert_eq!(err, FlowError::InsufficientChannelBalance);
        assert_eq!(w.agents.gateway.channel().unwrap().latest().state_index, 0);
        w.iot_send_payment(Amount::from_btc(1), None).unwrap();
    }

    #[test]
    fn agents_agree_on_latest_state() {
        let mut w = opened();
        for _ in 0..3 {
            w.iot_send_payment(Amount::from_sat(5_000_000), None).unwrap();
        }
        let g = w.agents.gateway.channel().unwrap();
        let b = w.agents.bridge.channel().unwrap();
        assert_eq!(g.latest(), b.latest());
        assert_eq!(g.params(), b.params());
    }
}
