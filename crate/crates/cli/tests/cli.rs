use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_iotgate");

fn iotgate(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_in(dir: &Path, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("scenario.toml");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let mut args = vec!["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    iotgate(&args)
}

fn read(dir: &Path, rel: &str) -> String {
    fs::read_to_string(dir.join("out").join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

#[test]
fn tables_csv_golden() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "scenario = \"tables\"", &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        read(dir.path(), "tables/toll.csv"),
        "speed_mph,wifi_available_s,wifi_satisfied,ble_available_s,ble_satisfied\n\
         50,11.2,Yes,9.8,Yes\n60,9.3,Yes,8.2,Yes\n80,7.0,Yes,6.2,Yes\n"
    );
    assert_eq!(
        read(dir.path(), "tables/cost.csv"),
        "fee_percent,monthly_fees_usd,monthly_total_usd\n5,4.50,94.50\n8,7.20,97.20\n10,9.00,99.00\n"
    );
    assert!(read(dir.path(), "tables/latency.csv").contains("ble,0.800,0.1155,4,0.015,2.000,5.722\n"));
}

#[test]
fn text_format_writes_txt_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "scenario = \"tables\"", &["--format", "text"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(read(dir.path(), "tables/cost.txt").contains("$94.50"));
}

#[test]
fn pay_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "scenario = \"pay\"\npayments = 2", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(read(dir.path(), "transcript.log").contains("device->gateway SendPayment"));
    assert!(read(dir.path(), "verdict.txt").starts_with("PASS pay\n"));
    let json: serde_json::Value = serde_json::from_str(&read(dir.path(), "verdict.json")).unwrap();
    assert_eq!(json["passed"], true);
}

#[test]
fn failing_scenario_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "scenario = \"pay\"\npayment_sat = 5_000_000_000", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(read(dir.path(), "verdict.txt").starts_with("FAIL pay\n"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for bad in ["sede = 1", "scenario = \"threat:nope\"", "link_profile = \"lora\"", "seed = \"x\"", "[[["] {
        let o = run_in(dir.path(), bad, &[]);
        assert_eq!(o.status.code(), Some(2), "{bad}");
        assert!(!o.stderr.is_empty());
    }
    let o = iotgate(&["run", "/nonexistent/cfg.toml", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run_in(dir.path(), "", &["--scenario", "dance"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = "scenario = \"close\"\ncloser = \"bridge\"\nseed = 42";
    run_in(a.path(), cfg, &[]);
    run_in(b.path(), cfg, &[]);
    for f in ["transcript.log", "verdict.txt", "verdict.json"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    let c = tempfile::tempdir().unwrap();
    run_in(c.path(), cfg, &["--seed", "43"]);
    assert_ne!(read(a.path(), "verdict.txt"), read(c.path(), "verdict.txt"));
}

#[test]
fn threat_scenario_via_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "attempts = 50", &["--scenario", "threat:theft"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(read(dir.path(), "verdict.txt").contains("randomized_rejected = 50/50"));
}

#[test]
fn shipped_configs_parse_and_pass() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let dir = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(configs).unwrap() {
        let path = entry.unwrap().path();
        let o = iotgate(&["run", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", path.display());
    }
}

#[test]
fn scenarios_lists_threats() {
    let o = iotgate(&["scenarios"]);
    let s = String::from_utf8(o.stdout).unwrap();
    assert!(s.lines().any(|l| l == "threat:revoked-bridge-watchtower"));
    assert_eq!(s.lines().count(), 18);
}
