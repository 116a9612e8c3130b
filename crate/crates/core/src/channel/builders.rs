//! Construction of funding, commitment, closing and claim transactions.

use serde::{Deserialize, Serialize};

use super::{ChannelError, ChannelParams, ChannelState};
use crate::chain::{OutPoint, Output, SpendCondition, Transaction};
use crate::crypto::{KeyPair, PaymentHash, Preimage, PublicKey};
use crate::Amount;

/// Which party stores (and may broadcast) a commitment version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Gateway,
    Bridge,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Gateway => Side::Bridge,
            Side::Bridge => Side::Gateway,
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Gateway => "gateway",
            Side::Bridge => "bridge",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitmentPair {
    pub gateway_held: Transaction,
    pub bridge_held: Transaction,
}

impl CommitmentPair {
    pub fn get(&self, side: Side) -> &Transaction {
        match side {
            Side::Gateway => &self.gateway_held,
            Side::Bridge => &self.bridge_held,
        }
    }

    pub fn get_mut(&mut self, side: Side) -> &mut Transaction {
        match side {
            Side::Gateway => &mut self.gateway_held,
            Side::Bridge => &mut self.bridge_held,
        }
    }
}

pub fn build_funding_tx(
    params: &ChannelParams,
    wallet_utxo: OutPoint,
    wallet_value: Amount,
) -> Result<Transaction, ChannelError> {
    let need = params.capacity + params.onchain_fee;
    if wallet_value < need || wallet_value == params.capacity {
        return Err(ChannelError::InsufficientFunds { need, have: wallet_value });
    }
    let mut outputs = vec![Output { value: params.capacity, condition: params.funding_condition() }];
    let change = wallet_value.saturating_sub(need);
    if !change.is_zero() {
        outputs.push(Output { value: change, condition: SpendCondition::single(params.iot_pub) });
    }
    Ok(Transaction::new(vec![wallet_utxo], outputs))
}

/// Balances left after the funder-paid on-chain fee, taken from the IoT
/// share first, then the bridge share, then the fee share.
fn pay_fee(params: &ChannelParams, mut shares: [Amount; 3]) -> Result<[Amount; 3], ChannelError> {
    let mut due = params.onchain_fee;
    for share in &mut shares {
        let take = if *share < due { *share } else { due };
        *share = share.saturating_sub(take);
        due = due.saturating_sub(take);
    }
    if due.is_zero() {
        Ok(shares)
    } else {
        Err(ChannelError::FeeUnaffordable)
    }
}

fn htlc_condition(params: &ChannelParams, hash: PaymentHash, expiry: u64) -> SpendCondition {
    SpendCondition::Or(vec![
        SpendCondition::hash_locked(hash, SpendCondition::single(params.bridge_pub)),
        SpendCondition::after_height(expiry, SpendCondition::single(params.iot_pub)),
    ])
}

fn commitment(
    params: &ChannelParams,
    funding: OutPoint,
    state: &ChannelState,
    holder: Side,
) -> Result<Transaction, ChannelError> {
    let [iot, bridge, fee] = pay_fee(params, [state.iot_balance, state.bridge_balance, state.gateway_fee_accrued])?;
    let k = params.to_self_delay_k;
    let (iot_cond, bridge_cond, fee_cond) = match holder {
        Side::Gateway => (
            SpendCondition::after_blocks(k, SpendCondition::single(params.iot_pub)),
            SpendCondition::single(params.bridge_pub),
            SpendCondition::Or(vec![
                SpendCondition::after_blocks(k, SpendCondition::single(params.gateway_pub)),
                SpendCondition::RevocationKey { revocation: state.revocation.gateway, claimant: params.bridge_pub },
            ]),
        ),
        Side::Bridge => (
            SpendCondition::single(params.iot_pub),
            SpendCondition::Or(vec![
                SpendCondition::after_blocks(k, SpendCondition::single(params.bridge_pub)),
                SpendCondition::RevocationKey { revocation: state.revocation.bridge, claimant: params.gateway_pub },
            ]),
            SpendCondition::single(params.gateway_pub),
        ),
    };
    let mut outputs = Vec::new();
    let mut push = |value: Amount, condition: SpendCondition| {
        if !value.is_zero() {
            outputs.push(Output { value, condition });
        }
    };
    push(iot, iot_cond);
    push(bridge, bridge_cond);
    for h in &state.pending_htlcs {
        push(h.value, htlc_condition(params, h.payment_hash, h.expiry));
    }
    push(fee, fee_cond);
    let mut tx = Transaction::new(vec![funding], outputs);
    // Distinct txids for otherwise identical states and holders.
    tx.locktime = state.state_index << 1 | u64::from(holder == Side::Bridge);
    Ok(tx)
}

pub fn build_commitments(
    params: &ChannelParams,
    funding: OutPoint,
    state: &ChannelState,
) -> Result<CommitmentPair, ChannelError> {
    state.check_conservation(params.capacity)?;
    Ok(CommitmentPair {
        gateway_held: commitment(params, funding, state, Side::Gateway)?,
        bridge_held: commitment(params, funding, state, Side::Bridge)?,
    })
}

pub fn build_mutual_close(
    params: &ChannelParams,
    funding: OutPoint,
    state: &ChannelState,
) -> Result<Transaction, ChannelError> {
    state.check_conservation(params.capacity)?;
    if !state.pending_htlcs.is_empty() {
        return Err(ChannelError::PendingHtlcs(state.pending_htlcs.len()));
    }
    let [iot, bridge, fee] = pay_fee(params, [state.iot_balance, state.bridge_balance, state.gateway_fee_accrued])?;
    let outputs = [(iot, params.iot_pub), (bridge, params.bridge_pub), (fee, params.gateway_pub)]
        .into_iter()
        .filter(|(v, _)| !v.is_zero())
        .map(|(value, key)| Output { value, condition: SpendCondition::single(key) })
        .collect();
    Ok(Transaction::new(vec![funding], outputs))
}

/// Unsigned transaction moving outputs `vouts` of `source` to `to`, less `fee`.
pub fn build_sweep(source: &Transaction, vouts: &[u32], to: PublicKey, fee: Amount) -> Option<Transaction> {
    if vouts.is_empty() {
        return None;
    }
    let txid = source.txid();
    let total: Amount = vouts.iter().map(|v| source.outputs[*v as usize].value).sum();
    let value = total.checked_sub(fee).filter(|v| !v.is_zero())?;
    let inputs = vouts.iter().map(|vout| OutPoint { txid, vout: *vout }).collect();
    Some(Transaction::new(inputs, vec![Output { value, condition: SpendCondition::single(to) }]))
}

fn vouts_where(tx: &Transaction, pred: impl Fn(&SpendCondition) -> bool) -> Vec<u32> {
    tx.outputs.iter().enumerate().filter(|(_, o)| pred(&o.condition)).map(|(i, _)| i as u32).collect()
}

/// Claims every output of a revoked commitment carrying `revocation` in one
/// transaction, signed by both the revealed key and the claimant.
pub fn build_confiscation(
    commitment: &Transaction,
    revocation: &KeyPair,
    claimant: &KeyPair,
    fee: Amount,
) -> Option<Transaction> {
    let vouts = vouts_where(commitment, |c| c.has_revocation_key(&revocation.public));
    let mut tx = build_sweep(commitment, &vouts, claimant.public, fee)?;
    tx.sign_all_inputs(revocation);
    tx.sign_all_inputs(claimant);
    Some(tx)
}

fn htlc_hash(condition: &SpendCondition) -> Option<PaymentHash> {
    match condition {
        SpendCondition::Or(branches) => branches.iter().find_map(|b| match b {
            SpendCondition::HashLock { hash, .. } => Some(*hash),
            _ => None,
        }),
        _ => None,
    }
}

/// HTLC outputs of `commitment` locked to `hash`.
pub fn htlc_vouts(commitment: &Transaction, hash: &PaymentHash) -> Vec<u32> {
    vouts_where(commitment, |c| htlc_hash(c) == Some(*hash))
}

/// Bridge claim of the HTLC outputs matching `preimage`.
pub fn build_htlc_claim(
    commitment: &Transaction,
    preimage: &Preimage,
    bridge: &KeyPair,
    fee: Amount,
) -> Option<Transaction> {
    let vouts = htlc_vouts(commitment, &preimage.hash());
    let mut tx = build_sweep(commitment, &vouts, bridge.public, fee)?;
    for input in &mut tx.inputs {
        input.witness.preimages.push(*preimage);
    }
    tx.sign_all_inputs(bridge);
    Some(tx)
}

/// Device refund of every HTLC output of `commitment` whose expiry is at or
/// below `height`.
pub fn build_htlc_refund(commitment: &Transaction, iot: &KeyPair, height: u64, fee: Amount) -> Option<Transaction> {
    let vouts = vouts_where(commitment, |c| match c {
        SpendCondition::Or(branches) if htlc_hash(c).is_some() => {
            branches.iter().any(|b| matches!(b, SpendCondition::AbsoluteTimelock { height: h, .. } if *h <= height))
        }
        _ => false,
    });
    let mut tx = build_sweep(commitment, &vouts, iot.public, fee)?;
    tx.sign_all_inputs(iot);
    Some(tx)
}

/// Sweep of the outputs of `commitment` that `owner` can take alone once the
/// relative timelock has passed (or immediately, for plain outputs).
pub fn build_owner_sweep(commitment: &Transaction, owner: &KeyPair, fee: Amount) -> Option<Transaction> {
    let is_own = |c: &SpendCondition| match c {
        SpendCondition::RelativeTimelock { inner, .. } => inner.single_key() == Some(&owner.public),
        _ => c.single_key() == Some(&owner.public),
    };
    let vouts = vouts_where(commitment, |c| match c {
        SpendCondition::Or(branches) if htlc_hash(c).is_none() => branches.iter().any(is_own),
        _ => is_own(c),
    });
    let mut tx = build_sweep(commitment, &vouts, owner.public, fee)?;
    tx.sign_all_inputs(owner);
    Some(tx)
}
