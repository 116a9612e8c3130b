use iotgate::agents::WorldConfig;
use iotgate::threat::{run_mitm, run_revoked_broadcast, AttackScenario, MitmKind, RevokedBroadcast};
use proptest::prelude::*;

fn cfg(seed: u64, k: u32) -> WorldConfig {
    WorldConfig { seed, to_self_delay_k: k, ..WorldConfig::default() }
}

#[test]
fn every_named_scenario_meets_its_expectation() {
    for name in AttackScenario::NAMES {
        let mut s = AttackScenario::named(name).unwrap();
        // Keep the big randomized runs for the acceptance target.
        match &mut s.attack {
            iotgate::threat::Attack::Theft { attempts } => *attempts = 50,
            iotgate::threat::Attack::Mitm { envelopes, .. } => *envelopes = 50,
            _ => {}
        }
        let v = s.run(&WorldConfig::default());
        assert!(v.passed(), "{v}");
        assert_eq!(v.scenario, name);
    }
}

#[test]
fn scenarios_are_deterministic() {
    let s = AttackScenario::named("revoked-bridge-watchtower").unwrap();
    assert_eq!(s.run(&cfg(3, 6)), s.run(&cfg(3, 6)));
}

#[test]
fn cheating_gateway_ends_below_honest_close() {
    let v = run_revoked_broadcast(&cfg(11, 6), &RevokedBroadcast::gateway_cheats(1, 2));
    assert!(v.passed(), "{v}");
    assert_eq!(v.finding("cheater_balance_honest"), Some("0.2 BTC"));
    assert_eq!(v.finding("cheater_balance_cheating"), Some("0 BTC"));
}

#[test]
fn offline_gateway_without_tower_loses_to_revoked_bridge_state() {
    let plan = RevokedBroadcast { victim_online: false, ..RevokedBroadcast::bridge_cheats(2, 3) };
    let v = run_revoked_broadcast(&cfg(5, 3), &plan);
    assert!(v.passed(), "{v}");
    assert_eq!(v.finding("outcome"), Some("cheater_swept"));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn revoked_gateway_state_is_always_punished_in_time(seed in any::<u64>(), k in 2u32..40) {
        let v = run_revoked_broadcast(&cfg(seed, k), &RevokedBroadcast::gateway_cheats(1, 2));
        prop_assert!(v.passed(), "{}", v);
        prop_assert_eq!(v.finding("outcome"), Some("punished"));
    }

    #[test]
    fn revoked_bridge_state_is_always_punished_in_time(seed in any::<u64>(), k in 2u32..40) {
        let v = run_revoked_broadcast(&cfg(seed, k), &RevokedBroadcast::bridge_cheats(2, 3));
        prop_assert!(v.passed(), "{}", v);
    }

    #[test]
    fn hostile_envelopes_never_move_state(seed in any::<u64>()) {
        let v = run_mitm(&cfg(seed, 6), MitmKind::Mixed, 40);
        prop_assert!(v.passed(), "{}", v);
    }
}
