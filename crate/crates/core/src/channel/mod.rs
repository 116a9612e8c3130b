//! Three-party (device, gateway, bridge) payment channel.
//!
//! The channel is funded by the device into a 3-of-3 output. Each state has
//! two commitment versions, one held by the gateway and one by the bridge.
//! Layout of the gateway-held version, in output order (zero outputs omitted):
//!
//! | output  | condition                                                        |
//! |---------|------------------------------------------------------------------|
//! | IoT     | after k blocks, device key                                       |
//! | bridge  | bridge key                                                       |
//! | HTLC    | preimage + bridge key, or device key from height `expiry`        |
//! | fee     | after k blocks, gateway key; or gateway revocation key + bridge  |
//!
//! The bridge-held version pays IoT and fee outputs immediately and puts the
//! bridge output behind `after k blocks, bridge key; or bridge revocation key +
//! gateway`. The on-chain fee comes out of the IoT output first.
//!
//! [`Channel::to_json`] exports the owner view as JSON: `params`, `funding`
//! (`{txid, vout}`), `states` (oldest first), `signatures` (per state index,
//! per holder, `[pubkey, signature]` pairs) and `reveals`.

mod builders;
mod revocation;
mod state;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use builders::{
    build_commitments, build_confiscation, build_funding_tx, build_htlc_claim, build_htlc_refund, build_mutual_close,
    build_owner_sweep, build_sweep, htlc_vouts, CommitmentPair, Side,
};
pub use revocation::{RevocationReveal, RevocationSeed};
pub use state::{ChannelState, Htlc, RevocationPoints, Update};

use crate::chain::{OutPoint, SpendCondition, Transaction, Txid};
use crate::crypto::{verify, KeyPair, PublicKey, Signature};
use crate::Amount;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub capacity: Amount,
    pub iot_pub: PublicKey,
    pub gateway_pub: PublicKey,
    pub bridge_pub: PublicKey,
    /// Relative delay before a broadcaster can sweep its own output.
    pub to_self_delay_k: u32,
    /// HTLC lifetime in blocks; expiry is the creation height plus this.
    pub htlc_timeout_w: u64,
    pub gateway_fee_percent: u32,
    pub confirmation_depth: u32,
    /// Fee paid by every transaction the channel builds.
    pub onchain_fee: Amount,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: &str| Err(ChannelError::InvalidParams(m.to_string()));
        if self.capacity.is_zero() {
            return bad("capacity must be positive");
        }
        if self.gateway_fee_percent >= 100 {
            return bad("gateway fee percent must be below 100");
        }
        if self.to_self_delay_k == 0 {
            return bad("to_self_delay_k must be at least 1");
        }
        if self.htlc_timeout_w == 0 {
            return bad("htlc_timeout_w must be at least 1");
        }
        if self.onchain_fee >= self.capacity {
            return bad("on-chain fee must be below capacity");
        }
        Ok(())
    }

    pub fn funding_condition(&self) -> SpendCondition {
        SpendCondition::multisig(3, vec![self.iot_pub, self.gateway_pub, self.bridge_pub])
    }

    /// Gateway fee for a payment of `amount`, rounded down.
    pub fn fee_for(&self, amount: Amount) -> Amount {
        amount.percent_floor(self.gateway_fee_percent)
    }

    pub fn is_party(&self, key: &PublicKey) -> bool {
        [self.iot_pub, self.gateway_pub, self.bridge_pub].contains(key)
    }

    pub fn side_key(&self, side: Side) -> PublicKey {
        match side {
            Side::Gateway => self.gateway_pub,
            Side::Bridge => self.bridge_pub,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
    #[error("wallet holds {have}, funding needs more than {need}")]
    InsufficientFunds { need: Amount, have: Amount },
    #[error("balances sum to {total}, capacity is {capacity}")]
    ConservationViolation { total: Amount, capacity: Amount },
    #[error("payment of {requested} exceeds channel balance {available}")]
    InsufficientChannelBalance { requested: Amount, available: Amount },
    #[error("payment amount must be positive after fees")]
    ZeroAmount,
    #[error("preimage matches no pending HTLC")]
    UnknownPreimage,
    #[error("HTLC fields disagree with the channel rules")]
    HtlcMismatch,
    #[error("no pending HTLC with id {0}")]
    UnknownHtlc(u64),
    #[error("no pending HTLC has expired")]
    NotExpired,
    #[error("the latest state cannot be revoked")]
    CannotRevokeLatest,
    #[error("{0} HTLCs still pending")]
    PendingHtlcs(usize),
    #[error("balances cannot cover the on-chain fee")]
    FeeUnaffordable,
    #[error("unknown state {0}")]
    UnknownState(u64),
    #[error("expected state {expected}, got {got}")]
    StateOutOfOrder { expected: u64, got: u64 },
    #[error("signature does not verify for the commitment")]
    InvalidSignature,
    #[error("revocation secret does not match the committed point")]
    RevocationMismatch,
    #[error("export: {0}")]
    Export(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectedSignatures {
    pub gateway_held: Vec<(PublicKey, Signature)>,
    pub bridge_held: Vec<(PublicKey, Signature)>,
}

impl CollectedSignatures {
    fn get_mut(&mut self, side: Side) -> &mut Vec<(PublicKey, Signature)> {
        match side {
            Side::Gateway => &mut self.gateway_held,
            Side::Bridge => &mut self.bridge_held,
        }
    }

    fn get(&self, side: Side) -> &[(PublicKey, Signature)] {
        match side {
            Side::Gateway => &self.gateway_held,
            Side::Bridge => &self.bridge_held,
        }
    }
}

/// One party's view of a channel: state history, commitment signatures
/// gathered so far and revocation secrets learned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    params: ChannelParams,
    funding: OutPoint,
    states: Vec<ChannelState>,
    signatures: BTreeMap<u64, CollectedSignatures>,
    reveals: Vec<RevocationReveal>,
}

impl Channel {
    pub fn new(params: ChannelParams, funding: OutPoint, initial: ChannelState) -> Result<Self, ChannelError> {
        params.validate()?;
        if initial.state_index != 0 {
            return Err(ChannelError::StateOutOfOrder { expected: 0, got: initial.state_index });
        }
        initial.check_conservation(params.capacity)?;
        Ok(Channel { params, funding, states: vec![initial], signatures: BTreeMap::new(), reveals: Vec::new() })
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn funding(&self) -> OutPoint {
        self.funding
    }

    pub fn latest(&self) -> &ChannelState {
        self.states.last().expect("channel always has a state")
    }

    pub fn states(&self) -> &[ChannelState] {
        &self.states
    }

    pub fn state(&self, index: u64) -> Result<&ChannelState, ChannelError> {
        self.states.get(index as usize).ok_or(ChannelError::UnknownState(index))
    }

    pub fn commitments(&self, index: u64) -> Result<CommitmentPair, ChannelError> {
        build_commitments(&self.params, self.funding, self.state(index)?)
    }

    pub fn push_state(&mut self, state: ChannelState) -> Result<(), ChannelError> {
        let expected = self.latest().state_index + 1;
        if state.state_index != expected {
            return Err(ChannelError::StateOutOfOrder { expected, got: state.state_index });
        }
        state.check_conservation(self.params.capacity)?;
        self.states.push(state);
        Ok(())
    }

    /// Records `sig` by `signer` on the `holder` commitment of state `index`
    /// after checking it against that commitment's txid.
    pub fn add_signature(
        &mut self,
        index: u64,
        holder: Side,
        signer: PublicKey,
        sig: Signature,
    ) -> Result<(), ChannelError> {
        let tx = self.commitments(index)?.get(holder).clone();
        if !self.params.is_party(&signer) || !verify(&tx.txid().0, &sig, &signer) {
            return Err(ChannelError::InvalidSignature);
        }
        let list = self.signatures.entry(index).or_default().get_mut(holder);
        list.retain(|(pk, _)| *pk != signer);
        list.push((signer, sig));
        Ok(())
    }

    pub fn sign_commitment(&mut self, index: u64, holder: Side, key: &KeyPair) -> Result<Signature, ChannelError> {
        let sig = self.commitments(index)?.get(holder).signature(key);
        self.add_signature(index, holder, key.public, sig)?;
        Ok(sig)
    }

    pub fn signatures(&self, index: u64, holder: Side) -> &[(PublicKey, Signature)] {
        self.signatures.get(&index).map(|s| s.get(holder)).unwrap_or(&[])
    }

    /// The `holder` commitment of state `index` with every signature collected.
    pub fn signed_commitment(&self, index: u64, holder: Side) -> Result<Transaction, ChannelError> {
        let mut tx = self.commitments(index)?.get(holder).clone();
        for (pk, sig) in self.signatures(index, holder) {
            tx.add_signature(0, *pk, *sig);
        }
        Ok(tx)
    }

    /// Reveals `side`'s revocation secret for a superseded state. Revoking
    /// the same state twice returns the same secret.
    pub fn revoke_state(
        &mut self,
        side: Side,
        index: u64,
        seed: &RevocationSeed,
    ) -> Result<RevocationReveal, ChannelError> {
        let reveal = RevocationReveal { side, state_index: index, secret: seed.secret(index) };
        self.record_reveal(reveal.clone())?;
        Ok(reveal)
    }

    /// Stores a counterparty reveal after checking it opens the point that
    /// state committed to.
    pub fn record_reveal(&mut self, reveal: RevocationReveal) -> Result<(), ChannelError> {
        let state = self.state(reveal.state_index)?;
        if reveal.state_index >= self.latest().state_index {
            return Err(ChannelError::CannotRevokeLatest);
        }
        let point = match reveal.side {
            Side::Gateway => state.revocation.gateway,
            Side::Bridge => state.revocation.bridge,
        };
        if reveal.keypair().public != point {
            return Err(ChannelError::RevocationMismatch);
        }
        if self.revealed(reveal.side, reveal.state_index).is_none() {
            self.reveals.push(reveal);
        }
        Ok(())
    }

    pub fn revealed(&self, side: Side, index: u64) -> Option<&RevocationReveal> {
        self.reveals.iter().find(|r| r.side == side && r.state_index == index)
    }

    pub fn is_revoked(&self, side: Side, index: u64) -> bool {
        self.revealed(side, index).is_some()
    }

    /// Finds which state and holder a commitment txid belongs to.
    pub fn identify_commitment(&self, txid: &Txid) -> Option<(u64, Side)> {
        self.states.iter().find_map(|s| {
            let pair = build_commitments(&self.params, self.funding, s).ok()?;
            [Side::Gateway, Side::Bridge]
                .into_iter()
                .find(|side| pair.get(*side).txid() == *txid)
                .map(|side| (s.state_index, side))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("channel serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, ChannelError> {
        let ch: Channel = serde_json::from_str(json).map_err(|e| ChannelError::Export(e.to_string()))?;
        ch.params.validate()?;
        for (i, s) in ch.states.iter().enumerate() {
            if s.state_index != i as u64 {
                return Err(ChannelError::StateOutOfOrder { expected: i as u64, got: s.state_index });
            }
            s.check_conservation(ch.params.capacity)?;
        }
        if ch.states.is_empty() {
            return Err(ChannelError::Export("no states".into()));
        }
        Ok(ch)
    }
}
