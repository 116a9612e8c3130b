use iotgate::perf::*;
use proptest::prelude::*;

// Exact rational evaluation of range / (mph * 0.44704), computed offline.
const TOLL_ORACLE: [(f64, f64, f64); 6] = [
    (250.0, 50.0, 11.184681460272012),
    (250.0, 60.0, 9.32056788356001),
    (250.0, 80.0, 6.990425912670007),
    (220.0, 50.0, 9.84251968503937),
    (220.0, 60.0, 8.202099737532809),
    (220.0, 80.0, 6.1515748031496065),
];

#[test]
fn available_time_matches_independent_oracle() {
    for (range, mph, want) in TOLL_ORACLE {
        let got = available_time(range, mph).unwrap();
        assert!((got - want).abs() < 1e-9, "{range} m at {mph} mph: {got} vs {want}");
    }
}

#[test]
fn toll_csv_is_stable() {
    let cells = toll_table(&[LinkProfile::wifi(), LinkProfile::ble()], &TOLL_SPEEDS_MPH).unwrap();
    assert_eq!(
        toll_table_render(&cells, true),
        "speed_mph,wifi_available_s,wifi_satisfied,ble_available_s,ble_satisfied\n\
         50,11.2,Yes,9.8,Yes\n\
         60,9.3,Yes,8.2,Yes\n\
         80,7.0,Yes,6.2,Yes\n"
    );
}

#[test]
fn cost_csv_is_stable() {
    assert_eq!(
        cost_table_render(&TOLL_FEE_PERCENTS, true),
        "fee_percent,monthly_fees_usd,monthly_total_usd\n5,4.50,94.50\n8,7.20,97.20\n10,9.00,99.00\n"
    );
}

#[test]
fn slow_link_fails_feasibility() {
    let slow = LinkProfile { device_gateway_rtt_s: 2.0, ..LinkProfile::ble() };
    let cells = toll_table(&[slow], &[80.0]).unwrap();
    assert!(!cells[0].satisfied());
}

fn profile() -> impl Strategy<Value = LinkProfile> {
    (0.0..2.0f64, 0.0..1.0f64, 1.0..500.0f64, 0.0..5.0f64, 0u32..10, 0.0..0.1f64, 0.0..1.0f64).prop_map(
        |(rtt, cloud, range, ln, n, overhead, residual)| LinkProfile {
            name: "p".into(),
            device_gateway_rtt_s: rtt,
            iot_gw_cloud_rtt_s: cloud,
            range_m: range,
            ln_payment_delay_s: ln,
            n_exchanges: n,
            crypto_overhead_s: overhead,
            residual_s: residual,
        },
    )
}

proptest! {
    #[test]
    fn available_time_strictly_decreasing_in_speed(range in 1.0..1000.0f64, a in 1.0..200.0f64, d in 0.01..50.0f64) {
        prop_assert!(available_time(range, a + d).unwrap() < available_time(range, a).unwrap());
    }

    #[test]
    fn available_time_linear_in_range(range in 0.0..1000.0f64, c in 0.0..10.0f64, mph in 1.0..200.0f64) {
        let scaled = available_time(range * c, mph).unwrap();
        let expect = c * available_time(range, mph).unwrap();
        prop_assert!((scaled - expect).abs() <= 1e-9 * expect.max(1.0));
    }

    #[test]
    fn latency_monotone_in_every_field(p in profile(), bump in 0.0..1.0f64, field in 0usize..6) {
        let mut q = p.clone();
        match field {
            0 => q.device_gateway_rtt_s += bump,
            1 => q.iot_gw_cloud_rtt_s += bump,
            2 => q.ln_payment_delay_s += bump,
            3 => q.n_exchanges += 1,
            4 => q.crypto_overhead_s += bump,
            _ => q.residual_s += bump,
        }
        prop_assert!(payment_latency(&q) >= payment_latency(&p));
    }

    #[test]
    fn monthly_total_is_base_times_one_plus_k(k in 0u32..=100, passes in 0u64..10, cents in 0u64..1000, days in 0u64..62) {
        let c = monthly_cost(&CostParams { passes_per_day: passes, toll_per_pass_cents: cents, gateway_fee_percent: k, days });
        let base = passes * cents * days;
        // Exact in cents whenever base * k is a whole number of cents.
        if (base * u64::from(k)) % 100 == 0 {
            prop_assert_eq!(c.total_cents * 100, base * (100 + u64::from(k)));
        }
        prop_assert_eq!(c.total_cents, base + c.fees_cents);
    }

    #[test]
    fn toll_example_exact_for_every_k(k in 0u32..=100) {
        let c = monthly_cost(&CostParams::toll_example(k));
        prop_assert_eq!(c.total_cents * 100, 9000 * (100 + u64::from(k)));
    }
}
