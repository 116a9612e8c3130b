mod common;

use common::fuzz;
use proptest::prelude::*;

#[test]
fn ten_thousand_steps_conserve_capacity() {
    assert_eq!(fuzz(42, 10_000, 10), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conservation_for_any_seed_and_fee(seed in any::<u64>(), pct in 0u32..100) {
        prop_assert_eq!(fuzz(seed, 300, pct), 0);
    }
}
