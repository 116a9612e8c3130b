//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines always print; exits non-zero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use iotgate::agents::WorldConfig;
use iotgate::chain::{ChainError, ChainParams, SpendCondition, Violation};
use iotgate::channel::{build_owner_sweep, Side};
use iotgate::perf::{
    available_time, monthly_cost, payment_latency, toll_table, CostParams, LinkProfile, MonthlyCost, TOLL_SPEEDS_MPH,
};
use iotgate::threat::{run_mitm, run_revoked_broadcast, run_theft_attempt, MitmKind, RevokedBroadcast};
use iotgate::{agents::World, Amount};

const TOLL_TOLERANCE_S: f64 = 0.05;
const LATENCY_TOLERANCE_S: f64 = 1e-9;
const TOLL_EXPECTED: [(&str, f64, f64); 6] = [
    ("wifi", 50.0, 11.2),
    ("wifi", 60.0, 9.3),
    ("wifi", 80.0, 7.0),
    ("ble", 50.0, 9.8),
    ("ble", 60.0, 8.2),
    ("ble", 80.0, 6.2),
];
const COST_EXPECTED: [(u32, u64, u64); 3] = [(5, 450, 9450), (8, 720, 9720), (10, 900, 9900)];
const THREAT_ATTEMPTS: usize = 1000;
const FUZZ_STEPS: usize = 10_000;

struct Line {
    id: u32,
    name: &'static str,
    ok: bool,
    detail: String,
    elapsed: Duration,
    budget: Option<Duration>,
}

fn timed(id: u32, name: &'static str, budget: Option<Duration>, f: impl FnOnce() -> (bool, String)) -> Line {
    let start = Instant::now();
    let (ok, detail) = f();
    let elapsed = start.elapsed();
    let in_budget = budget.is_none_or(|b| elapsed < b);
    Line { id, name, ok: ok && in_budget, detail, elapsed, budget }
}

fn toll_feasibility() -> (bool, String) {
    let wifi = LinkProfile::wifi();
    let ble = LinkProfile::ble();
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for (name, mph, want) in TOLL_EXPECTED {
        let p = if name == "wifi" { &wifi } else { &ble };
        let got = available_time(p.range_m, mph).expect("positive speed");
        worst = worst.max((got - want).abs());
        ok &= (got - want).abs() <= TOLL_TOLERANCE_S;
    }
    let (lw, lb) = (payment_latency(&wifi), payment_latency(&ble));
    ok &= (lw - 2.558).abs() <= LATENCY_TOLERANCE_S && (lb - 5.722).abs() <= LATENCY_TOLERANCE_S;
    let cells = toll_table(&[wifi, ble], &TOLL_SPEEDS_MPH).expect("valid profiles");
    let yes = cells.iter().filter(|c| c.satisfied()).count();
    ok &= yes == cells.len() && cells.len() == 6;
    (
        ok,
        format!(
            "max |available - expected| = {worst:.4} s (tol {TOLL_TOLERANCE_S}); latency wifi {lw:.3} s, ble {lb:.3} s; feasible {yes}/{}",
            cells.len()
        ),
    )
}

fn cost_table() -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, fees, total) in COST_EXPECTED {
        let got = monthly_cost(&CostParams::toll_example(k));
        ok &= got == MonthlyCost { fees_cents: fees, total_cents: total };
        parts.push(format!("k={k}: {}c/{}c", got.fees_cents, got.total_cents));
    }
    (ok, format!("{} (exact cents)", parts.join(", ")))
}

fn commitment_layout() -> (bool, String) {
    let config = WorldConfig {
        chain: ChainParams { onchain_fee: Amount::from_sat(10_000_000), ..ChainParams::default() },
        ..WorldConfig::default()
    };
    let mut w = World::new(config);
    if w.iot_open_channel(Amount::from_btc(10)).is_err() || w.iot_send_payment(Amount::from_btc(1), None).is_err() {
        return (false, "open or pay failed".into());
    }
    let ch = w.agents.gateway.channel().expect("open");
    let tx = ch.commitments(1).expect("state 1").gateway_held;
    let p = ch.params();
    let mut iot = None;
    let mut htlc = None;
    let mut fee = None;
    for o in &tx.outputs {
        match &o.condition {
            SpendCondition::RelativeTimelock { inner, .. } if inner.single_key() == Some(&p.iot_pub) => iot = Some(o),
            SpendCondition::Or(b) if b.iter().any(|c| matches!(c, SpendCondition::HashLock { .. })) => htlc = Some(o),
            c if c.has_revocation_key(&ch.latest().revocation.gateway) => fee = Some(o),
            _ => {}
        }
    }
    let value = |o: Option<&iotgate::chain::Output>| o.map(|o| o.value.as_sat());
    let fee_has_revocation_or = fee.is_some_and(|o| {
        matches!(&o.condition, SpendCondition::Or(b) if b.iter().any(|c| matches!(c, SpendCondition::RevocationKey { .. })))
    });
    let ok = tx.outputs.len() == 3
        && value(iot) == Some(890_000_000)
        && value(htlc) == Some(90_000_000)
        && value(fee) == Some(10_000_000)
        && fee_has_revocation_or;
    (
        ok,
        format!(
            "outputs={} iot={:?} htlc={:?} fee={:?} sat; fee revocation branch: {fee_has_revocation_or}",
            tx.outputs.len(),
            value(iot),
            value(htlc),
            value(fee)
        ),
    )
}

fn golden_transcripts() -> (bool, String) {
    let golden = |t: &str| t.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect::<Vec<_>>();
    let mut w = World::new(WorldConfig::default());
    let mut results = Vec::new();
    let _ = w.iot_open_channel(Amount::from_btc(10));
    let a = w.transcript().len();
    results.push(("open", w.transcript_lines(0) == golden(include_str!("golden/open.txt"))));
    let _ = w.iot_send_payment(Amount::from_btc(1), None);
    let b = w.transcript().len();
    results.push(("pay", w.transcript_lines(a) == golden(include_str!("golden/pay.txt"))));
    let _ = w.iot_close_channel();
    results.push(("close", w.transcript_lines(b) == golden(include_str!("golden/close.txt"))));
    let ok = results.iter().all(|(_, ok)| *ok);
    let detail =
        results.iter().map(|(n, ok)| format!("{n}={}", if *ok { "match" } else { "DIFF" })).collect::<Vec<_>>();
    (ok, detail.join(" "))
}

fn threat_suite() -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for k in [3u32, 6, 144] {
        let config = WorldConfig { to_self_delay_k: k, ..WorldConfig::default() };
        let v = run_revoked_broadcast(&config, &RevokedBroadcast::gateway_cheats(1, 2));
        let punished = v.passed()
            && v.finding("outcome") == Some("punished")
            && v.checks.iter().any(|(n, ok)| n == "entire_revocable_output_claimed" && *ok)
            && v.checks.iter().any(|(n, ok)| n == "confiscated_before_timelock" && *ok);
        ok &= punished;
        parts.push(format!(
            "(a) k={k}: {} after {} block(s)",
            v.finding("outcome").unwrap_or("?"),
            v.finding("confiscated_after_blocks").unwrap_or("-")
        ));
    }
    let theft = run_theft_attempt(&WorldConfig::default(), THREAT_ATTEMPTS);
    ok &= theft.passed() && theft.finding("randomized_rejected") == Some("1000/1000");
    parts.push(format!("(b) rejected {}", theft.finding("randomized_rejected").unwrap_or("?")));
    let mitm = run_mitm(&WorldConfig::default(), MitmKind::Mixed, THREAT_ATTEMPTS);
    ok &= mitm.passed() && mitm.finding("state_transitions") == Some("0");
    parts.push(format!(
        "(c) {} envelopes, {} rejected, {} transitions",
        mitm.finding("envelopes").unwrap_or("?"),
        mitm.finding("rejected").unwrap_or("?"),
        mitm.finding("state_transitions").unwrap_or("?")
    ));
    (ok, parts.join("; "))
}

fn conservation() -> (bool, String) {
    let violations = common::fuzz(0xacce55, FUZZ_STEPS, 10);
    (violations == 0, format!("{FUZZ_STEPS} steps, {violations} violations"))
}

fn timelock_boundary() -> (bool, String) {
    let mut passed = 0;
    let mut total = 0;
    for k in 1u32..=20 {
        let config = WorldConfig { to_self_delay_k: k, ..WorldConfig::default() };
        let mut w = World::new(config);
        if w.iot_open_channel(Amount::from_btc(10)).is_err() || w.iot_send_payment(Amount::from_btc(1), None).is_err() {
            total += 2;
            continue;
        }
        let keys = w.agents.gateway.keys().clone();
        let mut ch = w.agents.gateway.channel().expect("open").clone();
        let n = ch.latest().state_index;
        ch.sign_commitment(n, Side::Gateway, &keys).expect("latest");
        let commitment = ch.signed_commitment(n, Side::Gateway).expect("latest");
        let fee = ch.params().onchain_fee;
        if w.chain.submit_tx(commitment.clone()).is_err() {
            total += 2;
            continue;
        }
        w.chain.mine_block(1).expect("mine");
        let h = w.chain.confirmation_height(&commitment.txid()).expect("confirmed");
        let sweep = build_owner_sweep(&commitment, &keys, fee).expect("fee output");
        let at_k = w.chain.validate_spend(&sweep, h + u64::from(k));
        let before = w.chain.validate_spend(&sweep, h + u64::from(k) - 1);
        total += 2;
        passed += usize::from(at_k.is_ok());
        passed += usize::from(matches!(
            before,
            Err(ChainError::InvalidWitness { violation: Violation::TimelockNotElapsed { .. }, .. })
        ));
    }
    (passed == 40 && total == 40, format!("{passed}/{total} assertions"))
}

fn main() -> ExitCode {
    let ms = Duration::from_millis;
    let lines = [
        timed(1, "toll-gate available time and feasibility", Some(ms(1000)), toll_feasibility),
        timed(2, "monthly cost by gateway fee", Some(ms(1000)), cost_table),
        timed(3, "gateway-held commitment after one payment", Some(ms(1000)), commitment_layout),
        timed(4, "golden open/pay/close transcripts", None, golden_transcripts),
        timed(5, "threat suite", Some(ms(30_000)), threat_suite),
        timed(6, "conservation fuzz", Some(ms(30_000)), conservation),
        timed(7, "relative timelock boundary k=1..20", None, timelock_boundary),
    ];
    for l in &lines {
        let budget = l.budget.map(|b| format!(" (budget {} ms)", b.as_millis())).unwrap_or_default();
        println!(
            "{} criterion {}: {}: {} [{:.1} ms{}]",
            if l.ok { "PASS" } else { "FAIL" },
            l.id,
            l.name,
            l.detail,
            l.elapsed.as_secs_f64() * 1000.0,
            budget
        );
    }
    let failed = lines.iter().filter(|l| !l.ok).count();
    println!("acceptance: {}/{} criteria passed", lines.len() - failed, lines.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
