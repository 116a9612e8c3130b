//! Helpers shared by integration test targets.

use iotgate::channel::{ChannelParams, ChannelState, RevocationPoints, RevocationSeed};
use iotgate::crypto::{KeyPair, Preimage, SecretKey};
use iotgate::Amount;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn params(fee_percent: u32) -> ChannelParams {
    let k = |n: u8| KeyPair::from_secret(SecretKey([n; 32])).public;
    ChannelParams {
        capacity: Amount::from_btc(10),
        iot_pub: k(1),
        gateway_pub: k(2),
        bridge_pub: k(3),
        to_self_delay_k: 6,
        htlc_timeout_w: 20,
        gateway_fee_percent: fee_percent,
        confirmation_depth: 3,
        onchain_fee: Amount::from_sat(10_000),
    }
}

/// Independent balance bookkeeping: payments move `amount` out of the IoT
/// share, split into floor(amount * pct / 100) fee and the rest in flight.
#[derive(Default)]
struct Oracle {
    iot: u64,
    bridge: u64,
    fee: u64,
    in_flight: Vec<(Preimage, u64, u64, u64)>,
}

/// Runs `steps` random payment/settle/timeout steps, returning the number of
/// states whose four-way sum differed from capacity or from the oracle.
pub fn fuzz(seed: u64, steps: usize, fee_percent: u32) -> usize {
    let p = params(fee_percent);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let gw = RevocationSeed::from_bytes([7; 32]);
    let br = RevocationSeed::from_bytes([8; 32]);
    let pts = |n: u64| RevocationPoints { gateway: gw.point(n), bridge: br.point(n) };
    let mut state = ChannelState::initial(&p, pts(0));
    let mut oracle = Oracle { iot: p.capacity.as_sat(), ..Oracle::default() };
    let mut height = 0u64;
    let mut violations = 0;
    let mut last_fee = 0u64;

    for _ in 0..steps {
        height += rng.gen_range(0..3);
        let next_index = state.state_index + 1;
        let choice = rng.gen_range(0..10);
        let result = if choice < 5 {
            let max = state.iot_balance.as_sat().min(50_000_000);
            let amount = rng.gen_range(0..=max);
            let mut pre = [0u8; 32];
            rng.fill(&mut pre);
            let pre = Preimage(pre);
            let r = state.apply_payment(&p, Amount::from_sat(amount), pre.hash(), height, pts(next_index));
            if r.is_ok() {
                let fee = amount * u64::from(fee_percent) / 100;
                oracle.iot -= amount;
                oracle.fee += fee;
                oracle.in_flight.push((pre, amount - fee, fee, height + p.htlc_timeout_w));
            }
            r
        } else if choice < 8 {
            if oracle.in_flight.is_empty() {
                continue;
            }
            let i = rng.gen_range(0..oracle.in_flight.len());
            let r = state.settle_htlc(&p, &oracle.in_flight[i].0, pts(next_index));
            if r.is_ok() {
                let (_, value, _, _) = oracle.in_flight.remove(i);
                oracle.bridge += value;
            }
            r
        } else {
            let r = state.timeout_htlc(&p, height, pts(next_index));
            if r.is_ok() {
                oracle.in_flight.retain(|&(_, value, fee, expiry)| {
                    if height >= expiry {
                        oracle.iot += value + fee;
                        oracle.fee -= fee;
                        false
                    } else {
                        true
                    }
                });
            }
            r
        };
        let Ok(next) = result else { continue };
        if next.state_index != state.state_index + 1 {
            violations += 1;
        }
        state = next;
        let htlc: u64 = oracle.in_flight.iter().map(|h| h.1).sum();
        let sum = state.iot_balance + state.bridge_balance + state.gateway_fee_accrued + state.htlc_total();
        if sum != p.capacity
            || state.iot_balance.as_sat() != oracle.iot
            || state.bridge_balance.as_sat() != oracle.bridge
            || state.gateway_fee_accrued.as_sat() != oracle.fee
            || state.htlc_total().as_sat() != htlc
        {
            violations += 1;
        }
        // Fee only decreases through a timeout refund.
        if state.gateway_fee_accrued.as_sat() < last_fee && choice < 8 {
            violations += 1;
        }
        last_fee = state.gateway_fee_accrued.as_sat();
    }
    violations
}
