use serde::{Deserialize, Serialize};

use super::{ChannelError, ChannelParams};
use crate::crypto::{PaymentHash, Preimage, PublicKey};
use crate::Amount;

/// An outgoing HTLC from the device side toward the bridge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Htlc {
    pub id: u64,
    pub value: Amount,
    /// Gateway fee charged for this payment, refunded if it times out.
    pub fee: Amount,
    pub payment_hash: PaymentHash,
    pub expiry: u64,
}

/// Revocation public keys for one state, one per broadcasting party.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationPoints {
    pub gateway: PublicKey,
    pub bridge: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Update {
    Add {
        amount: Amount,
        payment_hash: PaymentHash,
    },
    /// An HTLC proposed by the counterparty, checked against this side's view.
    AddHtlc(Htlc),
    Settle(Preimage),
    /// Payment failed downstream: refund value and fee to the device.
    Fail {
        id: u64,
    },
    /// Refund every HTLC expired at the given height.
    Timeout {
        current_height: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelState {
    pub state_index: u64,
    pub iot_balance: Amount,
    pub bridge_balance: Amount,
    pub gateway_fee_accrued: Amount,
    pub pending_htlcs: Vec<Htlc>,
    pub revocation: RevocationPoints,
    pub next_htlc_id: u64,
}

impl ChannelState {
    pub fn initial(params: &ChannelParams, revocation: RevocationPoints) -> Self {
        ChannelState {
            state_index: 0,
            iot_balance: params.capacity,
            bridge_balance: Amount::ZERO,
            gateway_fee_accrued: Amount::ZERO,
            pending_htlcs: Vec::new(),
            revocation,
            next_htlc_id: 0,
        }
    }

    pub fn htlc_total(&self) -> Amount {
        self.pending_htlcs.iter().map(|h| h.value).sum()
    }

    pub fn total(&self) -> Amount {
        self.iot_balance + self.bridge_balance + self.gateway_fee_accrued + self.htlc_total()
    }

    pub fn check_conservation(&self, capacity: Amount) -> Result<(), ChannelError> {
        let total = self.total();
        if total == capacity {
            Ok(())
        } else {
            Err(ChannelError::ConservationViolation { total, capacity })
        }
    }

    pub fn htlc_for(&self, hash: &PaymentHash) -> Option<&Htlc> {
        self.pending_htlcs.iter().find(|h| h.payment_hash == *hash)
    }

    /// Applies `updates` in order and produces the next state. Nothing is
    /// modified if any update fails.
    pub fn advance(
        &self,
        params: &ChannelParams,
        updates: &[Update],
        current_height: u64,
        next: RevocationPoints,
    ) -> Result<ChannelState, ChannelError> {
        let mut s = self.clone();
        for update in updates {
            match update {
                Update::Add { amount, payment_hash } => s.add(params, *amount, *payment_hash, current_height)?,
                Update::AddHtlc(htlc) => s.add_htlc(params, htlc, current_height)?,
                Update::Settle(preimage) => s.settle(preimage)?,
                Update::Fail { id } => s.fail(*id)?,
                Update::Timeout { current_height } => s.timeout(*current_height)?,
            }
        }
        s.state_index += 1;
        s.revocation = next;
        s.check_conservation(params.capacity)?;
        Ok(s)
    }

    pub fn apply_payment(
        &self,
        params: &ChannelParams,
        amount: Amount,
        payment_hash: PaymentHash,
        current_height: u64,
        next: RevocationPoints,
    ) -> Result<ChannelState, ChannelError> {
        self.advance(params, &[Update::Add { amount, payment_hash }], current_height, next)
    }

    pub fn settle_htlc(
        &self,
        params: &ChannelParams,
        preimage: &Preimage,
        next: RevocationPoints,
    ) -> Result<ChannelState, ChannelError> {
        self.advance(params, &[Update::Settle(*preimage)], 0, next)
    }

    pub fn timeout_htlc(
        &self,
        params: &ChannelParams,
        current_height: u64,
        next: RevocationPoints,
    ) -> Result<ChannelState, ChannelError> {
        self.advance(params, &[Update::Timeout { current_height }], current_height, next)
    }

    fn add(
        &mut self,
        params: &ChannelParams,
        amount: Amount,
        payment_hash: PaymentHash,
        current_height: u64,
    ) -> Result<(), ChannelError> {
        if amount.is_zero() {
            return Err(ChannelError::ZeroAmount);
        }
        if amount > self.iot_balance {
            return Err(ChannelError::InsufficientChannelBalance { requested: amount, available: self.iot_balance });
        }
        let fee = params.fee_for(amount);
        let value = amount.saturating_sub(fee);
        if value.is_zero() {
            return Err(ChannelError::ZeroAmount);
        }
        self.iot_balance = self.iot_balance.saturating_sub(amount);
        self.gateway_fee_accrued += fee;
        self.pending_htlcs.push(Htlc {
            id: self.next_htlc_id,
            value,
            fee,
            payment_hash,
            expiry: current_height + params.htlc_timeout_w,
        });
        self.next_htlc_id += 1;
        Ok(())
    }

    fn add_htlc(&mut self, params: &ChannelParams, htlc: &Htlc, current_height: u64) -> Result<(), ChannelError> {
        let amount = htlc.value + htlc.fee;
        if htlc.value.is_zero() {
            return Err(ChannelError::ZeroAmount);
        }
        if amount > self.iot_balance {
            return Err(ChannelError::InsufficientChannelBalance { requested: amount, available: self.iot_balance });
        }
        if htlc.id != self.next_htlc_id || htlc.fee != params.fee_for(amount) || htlc.expiry <= current_height {
            return Err(ChannelError::HtlcMismatch);
        }
        self.iot_balance = self.iot_balance.saturating_sub(amount);
        self.gateway_fee_accrued += htlc.fee;
        self.pending_htlcs.push(htlc.clone());
        self.next_htlc_id += 1;
        Ok(())
    }

    fn fail(&mut self, id: u64) -> Result<(), ChannelError> {
        let pos = self.pending_htlcs.iter().position(|h| h.id == id).ok_or(ChannelError::UnknownHtlc(id))?;
        let h = self.pending_htlcs.remove(pos);
        self.iot_balance += h.value + h.fee;
        self.gateway_fee_accrued = self.gateway_fee_accrued.saturating_sub(h.fee);
        Ok(())
    }

    fn settle(&mut self, preimage: &Preimage) -> Result<(), ChannelError> {
        let hash = preimage.hash();
        let pos =
            self.pending_htlcs.iter().position(|h| h.payment_hash == hash).ok_or(ChannelError::UnknownPreimage)?;
        let htlc = self.pending_htlcs.remove(pos);
        self.bridge_balance += htlc.value;
        Ok(())
    }

    fn timeout(&mut self, current_height: u64) -> Result<(), ChannelError> {
        let (expired, live): (Vec<_>, Vec<_>) = self.pending_htlcs.drain(..).partition(|h| current_height >= h.expiry);
        self.pending_htlcs = live;
        if expired.is_empty() {
            return Err(ChannelError::NotExpired);
        }
        for h in expired {
            self.iot_balance += h.value + h.fee;
            self.gateway_fee_accrued = self.gateway_fee_accrued.saturating_sub(h.fee);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::tests::params;
    use crate::crypto::{KeyPair, SecretKey};

    fn points(n: u8) -> RevocationPoints {
        RevocationPoints {
            gateway: KeyPair::from_secret(SecretKey([n; 32])).public,
            bridge: KeyPair::from_secret(SecretKey([n.wrapping_add(100); 32])).public,
        }
    }

    #[test]
    fn payment_of_one_btc_at_ten_percent() {
        let p = params();
        let s0 = ChannelState::initial(&p, points(0));
        let pre = Preimage([7; 32]);
        let s1 = s0.apply_payment(&p, Amount::from_btc(1), pre.hash(), 100, points(1)).unwrap();
        assert_eq!(s1.state_index, 1);
        assert_eq!(s1.iot_balance, Amount::from_btc(9));
        assert_eq!(s1.gateway_fee_accrued, Amount::from_sat(10_000_000));
        assert_eq!(s1.pending_htlcs[0].value, Amount::from_sat(90_000_000));
        assert_eq!(s1.pending_htlcs[0].expiry, 100 + p.htlc_timeout_w);

        let s2 = s1.settle_htlc(&p, &pre, points(2)).unwrap();
        assert_eq!(s2.bridge_balance, Amount::from_sat(90_000_000));
        assert!(s2.pending_htlcs.is_empty());
        assert_eq!(s2.settle_htlc(&p, &pre, points(3)), Err(ChannelError::UnknownPreimage));
    }

    #[test]
    fn payment_preconditions() {
        let p = params();
        let s0 = ChannelState::initial(&p, points(0));
        let h = Preimage([1; 32]).hash();
        assert_eq!(s0.apply_payment(&p, Amount::ZERO, h, 0, points(1)), Err(ChannelError::ZeroAmount));
        assert!(matches!(
            s0.apply_payment(&p, Amount::from_sat(p.capacity.as_sat() + 1), h, 0, points(1)),
            Err(ChannelError::InsufficientChannelBalance { .. })
        ));
        let all = s0.apply_payment(&p, p.capacity, h, 0, points(1)).unwrap();
        assert_eq!(all.iot_balance, Amount::ZERO);
        all.check_conservation(p.capacity).unwrap();
    }

    #[test]
    fn wrong_preimage_rejected() {
        let p = params();
        let s1 = ChannelState::initial(&p, points(0))
            .apply_payment(&p, Amount::from_btc(1), Preimage([1; 32]).hash(), 0, points(1))
            .unwrap();
        assert_eq!(s1.settle_htlc(&p, &Preimage([2; 32]), points(2)), Err(ChannelError::UnknownPreimage));
    }

    #[test]
    fn timeout_boundary_and_exact_refund() {
        let mut p = params();
        p.htlc_timeout_w = 120;
        let s0 = ChannelState::initial(&p, points(0));
        let s1 = s0.apply_payment(&p, Amount::from_btc(1), Preimage([1; 32]).hash(), 0, points(1)).unwrap();
        assert_eq!(s1.timeout_htlc(&p, 119, points(2)), Err(ChannelError::NotExpired));
        let s2 = s1.timeout_htlc(&p, 120, points(2)).unwrap();
        assert_eq!(s2.iot_balance, s0.iot_balance);
        assert_eq!(s2.bridge_balance, s0.bridge_balance);
        assert_eq!(s2.gateway_fee_accrued, s0.gateway_fee_accrued);
        assert!(s2.pending_htlcs.is_empty());
    }

    #[test]
    fn failed_batch_leaves_state_untouched() {
        let p = params();
        let s0 = ChannelState::initial(&p, points(0));
        let res = s0.advance(
            &p,
            &[
                Update::Add { amount: Amount::from_btc(1), payment_hash: Preimage([1; 32]).hash() },
                Update::Settle(Preimage([9; 32])),
            ],
            0,
            points(1),
        );
        assert_eq!(res, Err(ChannelError::UnknownPreimage));
        assert_eq!(s0.state_index, 0);
    }

    #[test]
    fn counterparty_add_must_match_local_rules() {
        let p = params();
        let s0 = ChannelState::initial(&p, points(0));
        let h = Preimage([1; 32]).hash();
        let s1 = s0.apply_payment(&p, Amount::from_btc(1), h, 10, points(1)).unwrap();
        let proposed = s1.pending_htlcs[0].clone();
        let mirrored = s0.advance(&p, &[Update::AddHtlc(proposed.clone())], 10, points(1)).unwrap();
        assert_eq!(mirrored, s1);
        let greedy = Htlc { fee: proposed.fee + Amount::from_sat(1), ..proposed.clone() };
        assert_eq!(s0.advance(&p, &[Update::AddHtlc(greedy)], 10, points(1)), Err(ChannelError::HtlcMismatch));
        let stale = Htlc { expiry: 10, ..proposed };
        assert_eq!(s0.advance(&p, &[Update::AddHtlc(stale)], 10, points(1)), Err(ChannelError::HtlcMismatch));
    }

    #[test]
    fn failed_htlc_refunds_fee() {
        let p = params();
        let s0 = ChannelState::initial(&p, points(0));
        let s1 = s0.apply_payment(&p, Amount::from_btc(1), Preimage([1; 32]).hash(), 0, points(1)).unwrap();
        let s2 = s1.advance(&p, &[Update::Fail { id: 0 }], 0, points(2)).unwrap();
        assert_eq!((s2.iot_balance, s2.gateway_fee_accrued), (s0.iot_balance, s0.gateway_fee_accrued));
        assert_eq!(s2.advance(&p, &[Update::Fail { id: 0 }], 0, points(3)), Err(ChannelError::UnknownHtlc(0)));
    }

    #[test]
    fn batched_settle_and_add_is_one_state() {
        let p = params();
        let a = Preimage([1; 32]);
        let s1 = ChannelState::initial(&p, points(0))
            .apply_payment(&p, Amount::from_btc(1), a.hash(), 0, points(1))
            .unwrap();
        let s2 = s1
            .advance(
                &p,
                &[
                    Update::Settle(a),
                    Update::Add { amount: Amount::from_btc(2), payment_hash: Preimage([2; 32]).hash() },
                ],
                5,
                points(2),
            )
            .unwrap();
        assert_eq!(s2.state_index, 2);
        assert_eq!(s2.bridge_balance, Amount::from_sat(90_000_000));
        assert_eq!(s2.pending_htlcs.len(), 1);
        assert_eq!(s2.pending_htlcs[0].id, 1);
    }
}
