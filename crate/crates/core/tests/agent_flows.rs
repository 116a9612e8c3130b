use iotgate::agents::{
    AgentError, AgentId, BridgeConfig, DeviceConfig, DeviceEvent, FlowError, ProtocolMessage, World, WorldConfig,
};
use iotgate::chain::{ChainError, Violation};
use iotgate::channel::{build_commitments, RevocationPoints, Side, Update};
use iotgate::crypto::{seal_envelope, EnvelopeError};
use iotgate::Amount;

const CAPACITY: Amount = Amount::from_btc(10);
const FEE: Amount = Amount::from_sat(10_000);

fn golden(text: &str) -> Vec<String> {
    text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect()
}

fn world(f: impl FnOnce(&mut WorldConfig)) -> World {
    let mut config = WorldConfig::default();
    f(&mut config);
    World::new(config)
}

fn opened() -> World {
    let mut w = world(|_| {});
    w.iot_open_channel(CAPACITY).unwrap();
    w
}

fn latest_index(w: &World) -> u64 {
    w.agents.gateway.channel().unwrap().latest().state_index
}

#[test]
fn open_pay_close_match_golden_transcripts() {
    let mut w = world(|_| {});
    w.iot_open_channel(CAPACITY).unwrap();
    let a = w.transcript().len();
    assert_eq!(w.transcript_lines(0), golden(include_str!("golden/open.txt")));
    w.iot_send_payment(Amount::from_btc(1), None).unwrap();
    let b = w.transcript().len();
    assert_eq!(w.transcript_lines(a), golden(include_str!("golden/pay.txt")));
    w.iot_close_channel().unwrap();
    assert_eq!(w.transcript_lines(b), golden(include_str!("golden/close.txt")));
    assert!(w.errors.is_empty(), "{:?}", w.errors);
}

#[test]
fn same_seed_same_run() {
    let run = || {
        let mut w = opened();
        w.iot_send_payment(Amount::from_btc(1), None).unwrap();
        w.iot_close_channel().unwrap();
        (w.transcript_lines(0), w.chain.dump_json(), w.now_ms())
    };
    assert_eq!(run(), run());
}

#[test]
fn funding_without_device_signature_is_never_broadcast() {
    let mut w = world(|c| c.device = DeviceConfig { sign_funding: false, ..DeviceConfig::default() });
    let device = w.agents.device.public();
    assert_eq!(w.iot_open_channel(CAPACITY), Err(FlowError::SignatureInvalid));
    assert!(w.chain.mempool().is_empty());
    assert!(w.chain.submissions().iter().all(|s| s.result.is_err()));
    assert_eq!(w.chain.balance(&device), Amount::from_btc(20));
}

#[test]
fn bridge_offline_at_open_is_rejected_and_wallet_untouched() {
    let mut w = world(|_| {});
    let device = w.agents.device.public();
    let before = w.chain.balance(&device);
    w.suspend(AgentId::Bridge, 1_000);
    assert_eq!(w.iot_open_channel(CAPACITY), Err(FlowError::BridgeRejected));
    assert_eq!(w.chain.balance(&device), before);
    assert!(w.chain.submissions().is_empty());
    assert_eq!(w.transcript_lines(0)[..3], golden(include_str!("golden/open.txt"))[..3]);
}

#[test]
fn bridge_declining_is_rejected() {
    let mut w = world(|c| c.bridge = BridgeConfig { accept_channels: false, ..BridgeConfig::default() });
    assert_eq!(w.iot_open_channel(CAPACITY), Err(FlowError::BridgeRejected));
}

#[test]
fn short_wallet_is_rejected_by_gateway() {
    let mut w = world(|c| c.device_wallet = CAPACITY);
    assert_eq!(w.iot_open_channel(CAPACITY), Err(FlowError::GatewayRejected("insufficient_funds".into())));
}

#[test]
fn funding_that_never_reaches_depth_times_out() {
    let mut w = world(|c| {
        c.chain.confirmation_depth = 6;
        c.confirmation_timeout_blocks = 2;
    });
    assert_eq!(w.iot_open_channel(CAPACITY), Err(FlowError::ConfirmationTimeout));
}

#[test]
fn one_btc_at_ten_percent() {
    let mut w = opened();
    w.iot_send_payment(Amount::from_btc(1), None).unwrap();
    assert_eq!(w.destinations["merchant"].received(), Amount::from_sat(90_000_000));
    let latest = w.agents.gateway.channel().unwrap().latest();
    assert_eq!(latest.gateway_fee_accrued, Amount::from_sat(10_000_000));
    assert_eq!(latest.iot_balance, Amount::from_btc(9));
    assert_eq!(latest.pending_htlcs[0].value, Amount::from_sat(90_000_000));
}

#[test]
fn withheld_device_signature_leaves_htlc_unspendable() {
    let mut w = world(|c| c.device = DeviceConfig { sign_commitments: false, ..DeviceConfig::default() });
    w.iot_open_channel(CAPACITY).unwrap();
    assert_eq!(w.iot_send_payment(Amount::from_btc(1), None), Err(FlowError::DeviceDeclinedSignature));
    assert_eq!(latest_index(&w), 0);
    assert_eq!(w.agents.bridge.channel().unwrap().latest().state_index, 0);

    // Oracle: the proposed bridge-held commitment with every signature but the device's.
    let ch = w.agents.gateway.channel().unwrap();
    let points = RevocationPoints { gateway: ch.latest().revocation.gateway, bridge: ch.latest().revocation.bridge };
    let hash = iotgate::crypto::PaymentHash([7; 32]);
    let next = ch
        .latest()
        .advance(ch.params(), &[Update::Add { amount: Amount::from_btc(1), payment_hash: hash }], 1, points)
        .unwrap();
    let mut tx = build_commitments(ch.params(), ch.funding(), &next).unwrap().bridge_held;
    tx.sign_input(0, w.agents.gateway.keys());
    tx.sign_input(0, w.agents.bridge.keys());
    let at = w.chain.height() + 1;
    match w.chain.validate_spend(&tx, at) {
        Err(ChainError::InvalidWitness { violation: Violation::ThresholdNotMet { have: 2, need: 3 }, .. }) => {}
        other => panic!("expected threshold failure, got {other:?}"),
    }
    // the channel still works once the device signs again
    w.agents.device.config.sign_commitments = true;
    w.iot_send_payment(Amount::from_btc(1), None).unwrap();
    assert_eq!(latest_index(&w), 1);
}

#[test]
fn two_payments_exchange_revocations_for_states_0_and_1() {
    let mut w = opened();
    w.iot_send_payment(Amount::from_btc(1), None).unwrap();
    w.iot_send_payment(Amount::from_btc(1), None).unwrap();
    let g = w.agents.gateway.channel().unwrap();
    let b = w.agents.bridge.channel().unwrap();
    assert_eq!(g.states().iter().map(|s| s.state_index).collect::<Vec<_>>(), vec![0, 1, 2]);
    for n in [0, 1] {
        assert!(g.is_revoked(Side::Bridge, n) && g.is_revoked(Side::Gateway, n));
        assert!(b.is_revoked(Side::Gateway, n) && b.is_revoked(Side::Bridge, n));
    }
    assert!(!g.is_revoked(Side::Gateway, 2) && !b.is_revoked(Side::Bridge, 2));
    // The second state folds in the settlement of the first payment.
    assert_eq!(g.latest().pending_htlcs.len(), 1);
    assert_eq!(g.latest().bridge_balance, Amount::from_sat(90_000_000));
    assert_eq!(g.latest(), b.latest());
}

#[test]
fn close_after_one_btc_splits_9_09_01() {
    let mut w = opened();
    w.iot_send_payment(Amount::from_btc(1), None).unwrap();
    let txid = w.iot_close_channel().unwrap();
    let tx = w.chain.find_tx(&txid).unwrap().clone();
    let p = w.closing_payouts(&tx);
    assert_eq!(p.device, Amount::from_sat(900_000_000 - 10_000));
    assert_eq!(p.bridge, Amount::from_sat(90_000_000));
    assert_eq!(p.gateway, Amount::from_sat(10_000_000));
    assert_eq!(p.total() + FEE, CAPACITY);
}

#[test]
fn close_at_state_zero_refunds_minus_fee() {
    let mut w = opened();
    let txid = w.iot_close_channel().unwrap();
    let tx = w.chain.find_tx(&txid).unwrap().clone();
    let p = w.closing_payouts(&tx);
    assert_eq!((p.device, p.bridge, p.gateway), (CAPACITY.saturating_sub(FEE), Amount::ZERO, Amount::ZERO));
}

#[test]
fn close_with_pending_htlc_is_refused() {
    let mut w = opened();
    w.with(AgentId::Device, |a, cx| a.device.start_payment(Amount::from_btc(1), None, cx));
    while w.transcript().last().map(|e| e.to_string()).as_deref() != Some("gateway->bridge revoke_and_ack") {
        assert!(w.step());
    }
    // Bridge drops out before it can forward: the HTLC stays committed.
    w.suspend(AgentId::Bridge, 1_000);
    w.run();
    assert_eq!(w.agents.device.events.last(), Some(&DeviceEvent::PaymentFailed("bridge_unresponsive".into())));
    assert_eq!(latest_index(&w), 1);
    assert_eq!(w.iot_close_channel(), Err(FlowError::PendingHtlcs));
}

#[test]
fn refused_payment_is_refunded_before_close() {
    let mut w = opened();
    w.destinations.get_mut("merchant").unwrap().online = false;
    assert_eq!(
        w.iot_send_payment(Amount::from_btc(1), None),
        Err(FlowError::GatewayRejected("destination_failed".into()))
    );
    let txid = w.iot_close_channel().unwrap();
    let p = w.closing_payouts(&w.chain.find_tx(&txid).unwrap().clone());
    assert_eq!(p.device, CAPACITY.saturating_sub(FEE));
}

#[test]
fn all_three_initiators_reach_the_same_balances() {
    let setup = || {
        let mut w = opened();
        w.iot_send_payment(Amount::from_btc(1), None).unwrap();
        w.iot_send_payment(Amount::from_sat(50_000_000), None).unwrap();
        w
    };
    let mut payouts = Vec::new();
    for initiator in 0..3 {
        let mut w = setup();
        let txid = match initiator {
            0 => w.iot_close_channel(),
            1 => w.gateway_close(),
            _ => w.bridge_close(),
        }
        .unwrap_or_else(|e| panic!("initiator {initiator}: {e}"));
        assert!(w.chain.is_confirmed(&txid));
        payouts.push(w.closing_payouts(&w.chain.find_tx(&txid).unwrap().clone()));
    }
    assert_eq!(payouts[0], payouts[1]);
    assert_eq!(payouts[0], payouts[2]);
    assert_eq!(payouts[0].device, Amount::from_sat(850_000_000 - 10_000));
}

#[test]
fn send_payment_while_opening_is_a_protocol_violation() {
    let mut w = world(|_| {});
    w.with(AgentId::Device, |a, cx| a.device.start_open(CAPACITY, cx));
    let bytes = w.with(AgentId::Device, |a, cx| {
        a.device.seal(ProtocolMessage::SendPayment { amount: Amount::from_btc(1), destination: "merchant".into() }, cx)
    });
    w.inject(AgentId::Device, AgentId::Gateway, bytes);
    w.run();
    assert!(matches!(w.errors.as_slice(), [(AgentId::Gateway, AgentError::ProtocolViolation(_))]));
    assert_eq!(w.destinations["merchant"].received(), Amount::ZERO);
}

#[test]
fn replayed_send_payment_is_rejected() {
    let mut w = opened();
    w.iot_send_payment(Amount::from_btc(1), None).unwrap();
    let captured = w.bus().wire().iter().find(|d| d.name == "SendPayment").unwrap().bytes.clone();
    w.inject(AgentId::Device, AgentId::Gateway, captured);
    w.run();
    assert_eq!(w.errors, vec![(AgentId::Gateway, AgentError::AuthFailure(EnvelopeError::Replayed))]);
    assert_eq!(latest_index(&w), 1);
    assert_eq!(w.destinations["merchant"].received(), Amount::from_sat(90_000_000));
}

#[test]
fn unknown_message_type_is_a_protocol_violation() {
    let mut w = opened();
    let mut payload = vec![0xee];
    payload.extend_from_slice(w.agents.device.channel_id().as_bytes());
    let (session, cert, gw) =
        (w.agents.device.session().clone(), w.agents.device.cert().clone(), w.agents.gateway.public());
    let now = w.now_ms();
    let env = seal_envelope(&payload, &session, &gw, now, Some(&cert), w.rng()).unwrap();
    w.inject(AgentId::Device, AgentId::Gateway, env.to_bytes());
    w.run();
    assert!(matches!(w.errors.as_slice(), [(AgentId::Gateway, AgentError::ProtocolViolation(_))]));
}

#[test]
fn bridge_offline_mid_payment_aborts_atomically() {
    let mut w = opened();
    w.iot_send_payment(Amount::from_btc(1), None).unwrap();
    w.suspend(AgentId::Bridge, 1_000);
    assert_eq!(w.iot_send_payment(Amount::from_btc(1), None), Err(FlowError::BridgeUnresponsive));
    let g = w.agents.gateway.channel().unwrap();
    assert_eq!(g.latest().state_index, 1);
    assert!(!g.is_revoked(Side::Gateway, 1));
}

#[test]
fn device_keeps_no_transactions() {
    let mut w = opened();
    w.iot_send_payment(Amount::from_btc(1), None).unwrap();
    let state = w.agents.device.persistent_state();
    let keys: Vec<&str> = state.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(
        keys,
        vec![
            "certificate",
            "channel_id",
            "default_destination",
            "gateway_pub",
            "public_key",
            "secret_key",
            "session_enc",
            "session_mac"
        ]
    );
    let text = state.to_string();
    assert!(!text.contains("inputs") && !text.contains("outputs") && !text.contains("txid"));
}
