use std::fmt;

use super::{check_gates, operational_world, Adversary, Verdict, WatchedChannel, Watchtower};
use crate::agents::{AgentId, World, WorldConfig};
use crate::chain::{Transaction, Txid};
use crate::channel::{build_htlc_claim, build_owner_sweep, Side};
use crate::crypto::KeyPair;
use crate::Amount;

/// Extra blocks an offline victim stays away beyond the timelock.
const OFFLINE_MARGIN: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// The victim or its watchtower confiscated every revocable output.
    Punished,
    /// Nobody reacted in time and the cheater swept its output.
    CheaterSwept,
    /// Revocable outputs are still unspent at the end of the run.
    Unclaimed,
    /// The broadcast state is the latest one; funds split per that state.
    NotRevoked,
    /// The revoked commitment has no output carrying the revocation key.
    NothingAtStake,
    /// The chain refused the broadcast itself, e.g. for lack of the device
    /// signature on a commitment the device never co-signed.
    BroadcastRejected,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Punished => "punished",
            Outcome::CheaterSwept => "cheater_swept",
            Outcome::Unclaimed => "unclaimed",
            Outcome::NotRevoked => "not_revoked",
            Outcome::NothingAtStake => "nothing_at_stake",
            Outcome::BroadcastRejected => "broadcast_rejected",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevokedBroadcast {
    pub adversary: Adversary,
    /// Commitment version the adversary broadcasts.
    pub state_index: u64,
    /// Payments made before the broadcast.
    pub payments: usize,
    pub victim_online: bool,
    pub watchtower: bool,
    /// Blocks after the broadcast confirms before the tower starts ticking.
    /// The tower always ticks once more at the very end.
    pub watchtower_delay: u64,
    /// Defaults to what the protocol promises for this setup.
    pub expected: Option<Outcome>,
}

impl RevokedBroadcast {
    pub fn gateway_cheats(state_index: u64, payments: usize) -> Self {
        RevokedBroadcast {
            adversary: Adversary::Gateway,
            state_index,
            payments,
            victim_online: true,
            watchtower: false,
            watchtower_delay: 0,
            expected: None,
        }
    }

    pub fn bridge_cheats(state_index: u64, payments: usize) -> Self {
        RevokedBroadcast { adversary: Adversary::Bridge, ..Self::gateway_cheats(state_index, payments) }
    }
}

fn party_keys(w: &World, id: AgentId) -> KeyPair {
    match id {
        AgentId::Gateway => w.agents.gateway.keys().clone(),
        AgentId::Bridge => w.agents.bridge.keys().clone(),
        AgentId::Device => unreachable!("the device never cheats"),
    }
}

fn confiscations(w: &World, victim: AgentId) -> &[Txid] {
    match victim {
        AgentId::Gateway => &w.agents.gateway.confiscations,
        _ => &w.agents.bridge.confiscations,
    }
}

/// One block's worth of cheater activity after the broadcast: claim HTLCs it
/// knows preimages for, then try to sweep its own output once allowed.
fn cheater_moves(
    w: &mut World,
    commitment: &Transaction,
    keys: &KeyPair,
    fee: Amount,
    swept: &mut bool,
    claimed: &mut bool,
) {
    if !*claimed {
        *claimed = true;
        let preimages: Vec<_> = w.destinations.values().flat_map(|d| d.preimages().collect::<Vec<_>>()).collect();
        for p in preimages {
            if let Some(tx) = build_htlc_claim(commitment, &p, keys, fee) {
                let _ = w.chain.submit_tx(tx);
            }
        }
    }
    if !*swept {
        if let Some(tx) = build_owner_sweep(commitment, keys, fee) {
            if w.chain.validate_spend(&tx, w.chain.height() + 1).is_ok() {
                *swept = w.chain.submit_tx(tx).is_ok();
            }
        }
    }
}

pub fn run_revoked_broadcast(config: &WorldConfig, plan: &RevokedBroadcast) -> Verdict {
    let k = u64::from(config.to_self_delay_k);
    let mut v = Verdict::new(format!(
        "revoked-broadcast adversary={} state={} k={k} victim_online={} watchtower={}",
        plan.adversary, plan.state_index, plan.victim_online, plan.watchtower
    ));
    let (cheater, victim, side) = match plan.adversary {
        Adversary::Gateway => (AgentId::Gateway, AgentId::Bridge, Side::Gateway),
        Adversary::Bridge => (AgentId::Bridge, AgentId::Gateway, Side::Bridge),
        Adversary::Network => {
            v.check("adversary_is_channel_party", false);
            return v;
        }
    };

    let honest = operational_world(config, plan.payments).and_then(|mut w| w.iot_close_channel().map(|_| w));
    let mut w = match (honest.as_ref(), operational_world(config, plan.payments)) {
        (Ok(_), Ok(w)) => w,
        (h, c) => {
            v.note("setup_error", format!("{:?}", h.as_ref().err().or(c.as_ref().err().as_ref())));
            v.check("setup", false);
            return v;
        }
    };
    let honest = honest.expect("checked above");
    let cheater_keys = party_keys(&w, cheater);
    let victim_keys = party_keys(&w, victim);
    let honest_cheater = honest.chain.balance(&cheater_keys.public);
    let honest_victim = honest.chain.balance(&victim_keys.public);

    let channel_of = |w: &World, id: AgentId| match id {
        AgentId::Gateway => w.agents.gateway.channel().cloned(),
        _ => w.agents.bridge.channel().cloned(),
    };
    let (Some(mut cheater_view), Some(victim_view)) = (channel_of(&w, cheater), channel_of(&w, victim)) else {
        v.check("setup", false);
        return v;
    };
    let n = plan.state_index;
    let fee = cheater_view.params().onchain_fee;
    let commitment = match cheater_view
        .sign_commitment(n, side, &cheater_keys)
        .and_then(|_| cheater_view.signed_commitment(n, side))
    {
        Ok(tx) => tx,
        Err(e) => {
            v.note("build_error", e);
            v.check("commitment_available", false);
            return v;
        }
    };
    let reveal = victim_view.revealed(side, n).cloned();
    let revocable: Vec<u32> = match &reveal {
        Some(r) => {
            let point = r.keypair().public;
            (0..commitment.outputs.len() as u32)
                .filter(|i| commitment.outputs[*i as usize].condition.has_revocation_key(&point))
                .collect()
        }
        None => Vec::new(),
    };
    let revocable_value: Amount = revocable.iter().map(|i| commitment.outputs[*i as usize].value).sum();

    let mut tower = plan.watchtower.then(|| {
        let mut t = Watchtower::new();
        t.watch(WatchedChannel::from_channel(&victim_view, side, &victim_keys));
        t
    });
    if !plan.victim_online {
        w.suspend(victim, k + OFFLINE_MARGIN);
    }

    let txid = commitment.txid();
    let device_signed = commitment.inputs[0].witness.signature_of(&cheater_view.params().iot_pub).is_some();
    if let Err(e) = w.chain.submit_tx(commitment.clone()) {
        let expected = plan.expected.unwrap_or(Outcome::BroadcastRejected);
        v.note("broadcast_error", e);
        v.note("outcome", Outcome::BroadcastRejected);
        v.note("expected", expected);
        v.check("outcome_as_expected", expected == Outcome::BroadcastRejected);
        v.check("rejected_only_without_device_signature", !device_signed);
        check_gates(&mut v, &w);
        return v;
    }
    w.mine(1);
    let broadcast_height = w.chain.confirmation_height(&txid).expect("mined above");

    let (mut swept, mut claimed) = (false, false);
    for since in 0..k + OFFLINE_MARGIN + 2 {
        if let Some(t) = tower.as_mut() {
            if since >= plan.watchtower_delay {
                t.tick(&mut w.chain);
            }
        }
        cheater_moves(&mut w, &commitment, &cheater_keys, fee, &mut swept, &mut claimed);
        w.mine(1);
    }
    w.resume(victim);
    w.mine(1);
    if let Some(t) = tower.as_mut() {
        t.tick(&mut w.chain);
    }

    let spender = revocable.first().and_then(|vout| w.chain.spent_by(&commitment.outpoint(*vout)).copied());
    let by_victim = |t: &Txid| {
        confiscations(&w, victim).contains(t) || tower.as_ref().is_some_and(|tw| tw.submitted().any(|s| s == t))
    };
    let outcome = if reveal.is_none() {
        Outcome::NotRevoked
    } else if revocable.is_empty() {
        Outcome::NothingAtStake
    } else {
        match spender {
            Some(t) if by_victim(&t) => Outcome::Punished,
            Some(_) => Outcome::CheaterSwept,
            None => Outcome::Unclaimed,
        }
    };
    let tower_in_time = plan.watchtower && plan.watchtower_delay < k;
    let expected = plan.expected.unwrap_or(if !device_signed {
        Outcome::BroadcastRejected
    } else if reveal.is_none() {
        Outcome::NotRevoked
    } else if revocable.is_empty() {
        Outcome::NothingAtStake
    } else if plan.victim_online || tower_in_time {
        Outcome::Punished
    } else {
        Outcome::CheaterSwept
    });

    let cheat_cheater = w.chain.balance(&cheater_keys.public);
    let cheat_victim = w.chain.balance(&victim_keys.public);
    v.note("k", k);
    v.note("commitment", txid);
    v.note("broadcast_height", broadcast_height);
    v.note("revoked", reveal.is_some());
    v.note("revocable_value", revocable_value);
    v.note("outcome", outcome);
    v.note("expected", expected);
    v.note("cheater_balance_cheating", cheat_cheater);
    v.note("cheater_balance_honest", honest_cheater);
    v.note("victim_balance_cheating", cheat_victim);
    v.note("victim_balance_honest", honest_victim);
    v.check("outcome_as_expected", outcome == expected);

    if outcome == Outcome::Punished {
        let justice = spender.and_then(|t| w.chain.find_tx(&t)).expect("spent by a confirmed tx");
        let claimed_all =
            revocable.iter().all(|vout| justice.inputs.iter().any(|i| i.prevout == commitment.outpoint(*vout)));
        v.check("entire_revocable_output_claimed", claimed_all);
        let at = w.chain.confirmation_height(&justice.txid()).expect("confirmed");
        v.note("confiscated_after_blocks", at - broadcast_height);
        v.check("confiscated_before_timelock", at - broadcast_height < k);
        v.check("cheating_does_not_pay", cheat_cheater < honest_cheater);
    }
    if let Some(t) = &tower {
        let late = t.log.iter().filter(|e| matches!(e, super::TowerEvent::TooLate { .. })).count();
        v.note("tower_submitted", t.submitted().count());
        v.note("tower_too_late", late);
        if plan.watchtower && !tower_in_time && reveal.is_some() && !revocable.is_empty() {
            v.check("tower_reports_too_late", late > 0);
        }
    }
    check_gates(&mut v, &w);
    v
}
