use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{check_gates, operational_world, Verdict, DEFAULT_PAYMENT};
use crate::agents::{AgentError, AgentId, Message, ProtocolMessage, World, WorldConfig};
use crate::crypto::Envelope;

const MITM_STREAM: u64 = 0x6d69_746d_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MitmKind {
    Tamper,
    Replay,
    Eavesdrop,
    /// Tamper and replay interleaved at random.
    Mixed,
}

/// Everything an accepted message could change.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Snapshot {
    gateway: String,
    gateway_index: Option<u64>,
    staged: usize,
    bridge: String,
    bridge_index: Option<u64>,
    device: String,
    device_events: usize,
    received: crate::Amount,
    transcript: usize,
    submissions: usize,
}

fn snapshot(w: &World) -> Snapshot {
    Snapshot {
        gateway: format!("{:?}", w.agents.gateway.phase()),
        gateway_index: w.agents.gateway.channel().map(|c| c.latest().state_index),
        staged: w.agents.gateway.staged().len(),
        bridge: format!("{:?}", w.agents.bridge.phase()),
        bridge_index: w.agents.bridge.channel().map(|c| c.latest().state_index),
        device: format!("{:?}", w.agents.device.phase()),
        device_events: w.agents.device.events.len(),
        received: w.destinations.values().map(|d| d.received()).sum(),
        transcript: w.transcript().len(),
        submissions: w.chain.submissions().len(),
    }
}

fn captured(w: &World, from: AgentId, name: &str) -> Option<Vec<u8>> {
    w.bus().wire().iter().rev().find(|d| d.from == from && d.name == name).map(|d| d.bytes.clone())
}

fn error_kind(e: &AgentError) -> String {
    let s = match e {
        AgentError::AuthFailure(inner) => format!("{inner:?}"),
        other => format!("{other:?}"),
    };
    s.split(['(', ' ', '{']).next().unwrap_or_default().to_string()
}

/// One randomized mutation of an envelope. Never returns the input unchanged.
fn tamper(bytes: &[u8], rng: &mut ChaCha20Rng) -> (Vec<u8>, &'static str) {
    let mut out = bytes.to_vec();
    match rng.gen_range(0..5) {
        0 => {
            let i = rng.gen_range(0..out.len());
            out[i] ^= 1 << rng.gen_range(0..8);
            (out, "bit_flip")
        }
        1 => {
            let i = rng.gen_range(0..out.len());
            out[i] = out[i].wrapping_add(rng.gen_range(1..=255));
            (out, "byte_set")
        }
        2 => {
            out.truncate(rng.gen_range(0..out.len()));
            (out, "truncate")
        }
        3 => {
            let extra = rng.gen_range(1..=16);
            out.extend((0..extra).map(|_| rng.gen::<u8>()));
            (out, "extend")
        }
        _ => {
            // Flip a bit of the encrypted payload, where amount and
            // destination live, and re-encode with everything else intact.
            let mut env = Envelope::from_bytes(bytes).expect("captured envelope parses");
            let i = rng.gen_range(0..env.ciphertext.len());
            env.ciphertext[i] ^= 1 << rng.gen_range(0..8);
            (env.to_bytes(), "ciphertext_flip")
        }
    }
}

pub fn run_mitm(config: &WorldConfig, kind: MitmKind, envelopes: usize) -> Verdict {
    match kind {
        MitmKind::Eavesdrop => eavesdrop(config),
        MitmKind::Tamper => run_envelope_attacks(config, envelopes, 1.0),
        MitmKind::Replay => run_envelope_attacks(config, envelopes, 0.0),
        MitmKind::Mixed => run_envelope_attacks(config, envelopes, 0.5),
    }
}

/// Injects `envelopes` hostile copies of captured device-link envelopes
/// after one honest payment. A share `tamper_share` is mutated, the rest are
/// byte-exact replays. Halfway through one block is mined so later replays
/// also arrive outside the freshness window.
pub fn run_envelope_attacks(config: &WorldConfig, envelopes: usize, tamper_share: f64) -> Verdict {
    let mut v = Verdict::new(format!("envelope-attacks n={envelopes} tamper_share={tamper_share}"));
    let mut w = match operational_world(config, 1) {
        Ok(w) => w,
        Err(e) => {
            v.note("setup_error", format!("{e:?}"));
            v.check("setup", false);
            return v;
        }
    };
    let (Some(to_gateway), Some(to_device)) =
        (captured(&w, AgentId::Device, "SendPayment"), captured(&w, AgentId::Gateway, "PaymentSuccess"))
    else {
        v.check("captured_envelopes", false);
        return v;
    };
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ MITM_STREAM);
    let received_after_payment = snapshot(&w).received;
    let mut baseline = snapshot(&w);
    let mut transitions = 0;
    let mut rejected = 0;
    let mut kinds: BTreeMap<String, usize> = BTreeMap::new();
    let mut mutations: BTreeMap<&str, usize> = BTreeMap::new();
    let mut ciphertext_flips_caught_by_mac = true;

    for i in 0..envelopes {
        if i == envelopes / 2 {
            w.mine(1);
            baseline = snapshot(&w);
        }
        let (from, to, original) = if rng.gen_bool(0.5) {
            (AgentId::Device, AgentId::Gateway, &to_gateway)
        } else {
            (AgentId::Gateway, AgentId::Device, &to_device)
        };
        let (bytes, mutation) =
            if rng.gen_bool(tamper_share) { tamper(original, &mut rng) } else { (original.clone(), "replay") };
        *mutations.entry(mutation).or_default() += 1;
        let errors_before = w.errors.len();
        w.inject(from, to, bytes);
        w.run();
        let new_errors = &w.errors[errors_before..];
        if new_errors.len() == 1 {
            rejected += 1;
            let kind = error_kind(&new_errors[0].1);
            if mutation == "ciphertext_flip" && kind != "MacMismatch" {
                ciphertext_flips_caught_by_mac = false;
            }
            *kinds.entry(kind).or_default() += 1;
        }
        let now = snapshot(&w);
        if now != baseline {
            transitions += 1;
            baseline = now;
        }
    }

    v.note("envelopes", envelopes);
    v.note("rejected", rejected);
    v.note("state_transitions", transitions);
    for (k, n) in &mutations {
        v.note(format!("mutation.{k}"), n);
    }
    for (k, n) in &kinds {
        v.note(format!("rejected.{k}"), n);
    }
    v.check("zero_state_transitions", transitions == 0);
    v.check("every_envelope_rejected", rejected == envelopes);
    v.check("single_payment_executed", snapshot(&w).received == received_after_payment);
    v.check("ciphertext_flips_fail_mac", ciphertext_flips_caught_by_mac);
    if tamper_share < 1.0 && envelopes >= 4 {
        v.check("fresh_replays_hit_replay_guard", kinds.contains_key("Replayed"));
        v.check("late_replays_are_stale", kinds.contains_key("StaleTimestamp"));
    }
    check_gates(&mut v, &w);
    v
}

/// Passive capture of the device link: neither the amount nor the
/// destination appears anywhere in the wire bytes.
fn eavesdrop(config: &WorldConfig) -> Verdict {
    let mut v = Verdict::new("eavesdrop");
    let w = match operational_world(config, 1) {
        Ok(w) => w,
        Err(e) => {
            v.note("setup_error", format!("{e:?}"));
            v.check("setup", false);
            return v;
        }
    };
    let sat = DEFAULT_PAYMENT.as_sat();
    let destination = config.destination.as_bytes().to_vec();
    let plaintext = Message::new(
        w.agents.device.channel_id(),
        ProtocolMessage::SendPayment { amount: DEFAULT_PAYMENT, destination: config.destination.clone() },
    )
    .to_bytes();
    let needles: [(&str, Vec<u8>); 4] = [
        ("amount_be", sat.to_be_bytes().to_vec()),
        ("amount_le", sat.to_le_bytes().to_vec()),
        ("destination", destination),
        ("plaintext", plaintext.clone()),
    ];
    let contains = |hay: &[u8], needle: &[u8]| hay.windows(needle.len()).any(|win| win == needle);
    // The search would find the fields if they were sent in the clear.
    v.check("oracle_sees_plaintext_fields", needles[..3].iter().any(|(_, n)| contains(&plaintext, n)));

    let link: Vec<&Vec<u8>> = w
        .bus()
        .wire()
        .iter()
        .filter(|d| matches!((d.from, d.to), (AgentId::Device, AgentId::Gateway) | (AgentId::Gateway, AgentId::Device)))
        .map(|d| &d.bytes)
        .collect();
    v.note("captured_messages", link.len());
    v.note("captured_bytes", link.iter().map(|b| b.len()).sum::<usize>());
    for (name, needle) in &needles {
        let leaks = link.iter().filter(|b| contains(b, needle)).count();
        v.note(format!("leaks.{name}"), leaks);
        v.check(format!("no_{name}_leak"), leaks == 0);
    }
    v.check("captured_something", !link.is_empty());
    v
}
