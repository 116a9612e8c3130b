use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{check_gates, operational_world, Verdict};
use crate::agents::WorldConfig;
use crate::chain::{ChainError, Output, SpendCondition, Transaction, Violation};
use crate::channel::{Channel, Side};
use crate::crypto::{KeyPair, PublicKey, Signature};

const THEFT_STREAM: u64 = 0x7468_6566_7400;

/// How one party's slot in the forged witness is filled.
#[derive(Debug, Clone, Copy)]
enum Slot {
    Valid,
    Absent,
    Garbage,
    WrongKey,
    Stale,
}

const FORGED: [Slot; 4] = [Slot::Absent, Slot::Garbage, Slot::WrongKey, Slot::Stale];

/// Gateway-built commitment with every HTLC output paying the gateway.
fn redirect_htlcs(commitment: &Transaction, gateway: PublicKey) -> Transaction {
    let mut tx = commitment.strip_witnesses();
    for out in &mut tx.outputs {
        if matches!(&out.condition, SpendCondition::Or(b) if b.iter().any(|c| matches!(c, SpendCondition::HashLock { .. })))
        {
            out.condition = SpendCondition::single(gateway);
        }
    }
    tx
}

fn drain_to(ch: &Channel, to: PublicKey) -> Transaction {
    let value = ch.params().capacity.saturating_sub(ch.params().onchain_fee);
    Transaction::new(vec![ch.funding()], vec![Output { value, condition: SpendCondition::single(to) }])
}

/// Signatures `party` has legitimately produced for some commitment of `ch`.
fn known_sigs(ch: &Channel, party: &PublicKey) -> Vec<(Transaction, Signature)> {
    let mut out = Vec::new();
    for s in ch.states() {
        let Ok(pair) = ch.commitments(s.state_index) else { continue };
        for side in [Side::Gateway, Side::Bridge] {
            if let Some((_, sig)) = ch.signatures(s.state_index, side).iter().find(|(pk, _)| pk == party) {
                out.push((pair.get(side).clone(), *sig));
            }
        }
    }
    out
}

fn is_threshold_rejection(r: &Result<crate::chain::Txid, ChainError>) -> bool {
    matches!(r, Err(ChainError::InvalidWitness { violation: Violation::ThresholdNotMet { need: 3, .. }, .. }))
}

/// The gateway tries to move channel funds without three valid signatures:
/// a 2-of-3 commitment, an HTLC redirected to itself, then `attempts`
/// randomized forgeries. A correctly signed commitment is the control.
pub fn run_theft_attempt(config: &WorldConfig, attempts: usize) -> Verdict {
    let mut v = Verdict::new(format!("theft attempts={attempts}"));
    let mut w = match operational_world(config, 1) {
        Ok(w) => w,
        Err(e) => {
            v.note("setup_error", format!("{e:?}"));
            v.check("setup", false);
            return v;
        }
    };
    let gateway = w.agents.gateway.keys().clone();
    let ch = w.agents.gateway.channel().expect("operational").clone();
    let p = ch.params().clone();
    let parties = [p.iot_pub, p.gateway_pub, p.bridge_pub];
    let wallet_before = w.chain.balance(&p.iot_pub);
    let latest = ch.latest().state_index;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ THEFT_STREAM);

    // Forged 2-of-3: the bridge signed the gateway-held commitment, the
    // device signature is left out.
    let mut two_of_three = ch.commitments(latest).expect("latest").gateway_held;
    for (pk, sig) in ch.signatures(latest, Side::Gateway) {
        if *pk == p.bridge_pub {
            two_of_three.add_signature(0, *pk, *sig);
        }
    }
    two_of_three.sign_input(0, &gateway);
    let r = w.chain.submit_tx(two_of_three);
    v.note("two_of_three", format!("{r:?}"));
    v.check(
        "two_of_three_rejected",
        matches!(r, Err(ChainError::InvalidWitness { violation: Violation::ThresholdNotMet { have: 2, need: 3 }, .. })),
    );

    // HTLC redirected to the gateway, carrying over the honest signatures.
    let honest = ch.signed_commitment(latest, Side::Gateway).expect("latest");
    let mut redirect = redirect_htlcs(&honest, gateway.public);
    for (pk, sig) in &honest.inputs[0].witness.signatures {
        redirect.add_signature(0, *pk, *sig);
    }
    redirect.sign_input(0, &gateway);
    let r = w.chain.submit_tx(redirect);
    v.note("redirect_htlc", format!("{r:?}"));
    v.check("redirect_htlc_rejected", is_threshold_rejection(&r));

    // Randomized forgeries.
    let mut templates: Vec<(Transaction, bool)> = Vec::new();
    for s in ch.states() {
        let pair = ch.commitments(s.state_index).expect("state exists");
        templates.push((pair.gateway_held, true));
        templates.push((pair.bridge_held, true));
    }
    templates.push((redirect_htlcs(&honest, gateway.public), false));
    templates.push((drain_to(&ch, gateway.public), false));
    let stale: Vec<Vec<(Transaction, Signature)>> = parties.iter().map(|k| known_sigs(&ch, k)).collect();

    let mut rejected = 0;
    let mut threshold = 0;
    for _ in 0..attempts {
        let (template, legit) = templates.choose(&mut rng).expect("non-empty").clone();
        let mut tx = template.strip_witnesses();
        if !legit && rng.gen_bool(0.5) {
            // Random split of the capacity between the three keys.
            let total = p.capacity.saturating_sub(p.onchain_fee).as_sat();
            let cut = rng.gen_range(1..total);
            tx.outputs = vec![
                Output { value: crate::Amount::from_sat(cut), condition: SpendCondition::single(gateway.public) },
                Output {
                    value: crate::Amount::from_sat(total - cut),
                    condition: SpendCondition::single(*parties.choose(&mut rng).expect("three")),
                },
            ];
        }
        let txid = tx.txid();
        let mut slots: Vec<Slot> = (0..3)
            .map(|_| if rng.gen_bool(0.5) { Slot::Valid } else { *FORGED.choose(&mut rng).expect("four") })
            .collect();
        if slots.iter().all(|s| matches!(s, Slot::Valid)) {
            let i = rng.gen_range(0..3);
            slots[i] = *FORGED.choose(&mut rng).expect("four");
        }
        for (i, slot) in slots.iter().enumerate() {
            let key = parties[i];
            let sig = match slot {
                // Only the gateway can sign fresh; others' valid signatures
                // exist only where they signed this very commitment.
                Slot::Valid if key == gateway.public => Some(gateway.sign(&txid.0)),
                Slot::Valid => stale[i].iter().find(|(t, _)| t.txid() == txid).map(|(_, s)| *s),
                Slot::Absent => None,
                Slot::Garbage => {
                    let mut b = [0u8; 64];
                    rng.fill(&mut b[..]);
                    Some(Signature(b))
                }
                Slot::WrongKey => Some(KeyPair::generate(&mut rng).sign(&txid.0)),
                Slot::Stale => stale[i]
                    .iter()
                    .filter(|(t, _)| t.txid() != txid)
                    .collect::<Vec<_>>()
                    .choose(&mut rng)
                    .map(|(_, s)| *s),
            };
            if let Some(sig) = sig {
                tx.add_signature(0, key, sig);
            }
        }
        if rng.gen_bool(0.2) {
            // Outsider signatures never count toward the threshold.
            let outsider = KeyPair::generate(&mut rng);
            tx.sign_input(0, &outsider);
        }
        let r = w.chain.submit_tx(tx);
        rejected += usize::from(r.is_err());
        threshold += usize::from(is_threshold_rejection(&r));
    }
    v.note("randomized_rejected", format!("{rejected}/{attempts}"));
    v.note("randomized_threshold_not_met", format!("{threshold}/{attempts}"));
    v.check("all_randomized_rejected", rejected == attempts);
    v.check("funding_untouched", w.chain.utxo(&ch.funding()).is_some() && w.chain.mempool().is_empty());
    v.check("device_balance_unchanged", w.chain.balance(&p.iot_pub) == wallet_before);

    // Control: the fully signed latest commitment goes through.
    let mut control_view = ch.clone();
    let control = control_view
        .sign_commitment(latest, Side::Gateway, &gateway)
        .and_then(|_| control_view.signed_commitment(latest, Side::Gateway));
    let r = control.map_err(|e| e.to_string()).and_then(|tx| w.chain.submit_tx(tx).map_err(|e| e.to_string()));
    v.note("control", format!("{r:?}"));
    v.check("control_accepted", r.is_ok());
    w.mine(1);
    check_gates(&mut v, &w);
    v
}
