//! Scenario execution and output files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use iotgate::agents::World;
use iotgate::perf::{
    cost_table_render, crypto_table_render, device_crypto_overhead, latency_table_render, toll_table,
    toll_table_render, LinkProfile,
};
use iotgate::threat::{check_gates, Attack, AttackScenario, Verdict};
use iotgate::Amount;

use crate::config::{Closer, Scenario, ScenarioConfig};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Text,
}

/// Everything a run produces, before it is written anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub verdict: Verdict,
    pub transcript: Vec<String>,
    /// (file stem, contents)
    pub tables: Vec<(&'static str, String)>,
}

pub fn execute(cfg: &ScenarioConfig, format: Format) -> Result<RunOutput, CliError> {
    match cfg.scenario() {
        Scenario::Tables => tables(cfg, format),
        Scenario::Threat(name) => Ok(threat(cfg, &name)),
        flow => Ok(protocol_flow(cfg, &flow)),
    }
}

fn protocol_flow(cfg: &ScenarioConfig, flow: &Scenario) -> RunOutput {
    let mut v = Verdict::new(cfg.scenario.clone());
    let mut w = World::new(cfg.world());
    let opened = w.iot_open_channel(Amount::from_sat(cfg.capacity_sat));
    v.check("open", opened.is_ok());
    match &opened {
        Ok(id) => v.note("channel_id", format!("{id:?}")),
        Err(e) => v.note("open_error", e),
    }
    if opened.is_ok() && matches!(flow, Scenario::Pay | Scenario::Close) {
        let amount = Amount::from_sat(cfg.payment_sat);
        let mut paid = 0;
        for i in 0..cfg.payments {
            match w.iot_send_payment(amount, None) {
                Ok(()) => paid += 1,
                Err(e) => v.note(format!("payment_{i}_error"), e),
            }
        }
        v.check("payments_succeeded", paid == cfg.payments);
        v.note("payments", format!("{paid}/{}", cfg.payments));
        let received: Amount = w.destinations.values().map(|d| d.received()).sum();
        v.note("destination_received", received);
    }
    if opened.is_ok() && *flow == Scenario::Close {
        let closed = match cfg.closer {
            Closer::Device => w.iot_close_channel(),
            Closer::Gateway => w.gateway_close(),
            Closer::Bridge => w.bridge_close(),
        };
        v.check("close", closed.is_ok());
        match closed {
            Ok(txid) => {
                v.note("closing_txid", txid);
                if let Some(tx) = w.chain.find_tx(&txid) {
                    let p = w.closing_payouts(tx);
                    v.note("payout_device", p.device);
                    v.note("payout_gateway", p.gateway);
                    v.note("payout_bridge", p.bridge);
                }
            }
            Err(e) => v.note("close_error", e),
        }
    }
    if let Some(ch) = w.agents.gateway.channel() {
        let s = ch.latest();
        v.note("state_index", s.state_index);
        v.note("iot_balance", s.iot_balance);
        v.note("bridge_balance", s.bridge_balance);
        v.note("gateway_fee_accrued", s.gateway_fee_accrued);
    }
    v.check("no_rejected_messages", w.errors.is_empty());
    for (agent, e) in &w.errors {
        v.note(format!("{agent}_rejected"), e);
    }
    v.note("chain_height", w.chain.height());
    v.note("simulated_ms", w.now_ms());
    check_gates(&mut v, &w);
    let transcript = w.transcript().iter().map(|e| format!("{:>8} ms  {e}", e.sent_ms)).collect();
    RunOutput { verdict: v, transcript, tables: Vec::new() }
}

fn threat(cfg: &ScenarioConfig, name: &str) -> RunOutput {
    let mut s = AttackScenario::named(name).expect("validated");
    match &mut s.attack {
        Attack::Theft { attempts } => *attempts = cfg.attempts,
        Attack::Mitm { envelopes, .. } => *envelopes = cfg.attempts,
        Attack::RevokedBroadcast { .. } => {}
    }
    let mut verdict = s.run(&cfg.world());
    verdict.scenario = cfg.scenario.clone();
    let transcript = vec![
        format!("scenario {}", s.name),
        format!("adversary {}", s.adversary),
        format!("watchtower {}", s.watchtower),
    ];
    RunOutput { verdict, transcript, tables: Vec::new() }
}

fn tables(cfg: &ScenarioConfig, format: Format) -> Result<RunOutput, CliError> {
    let csv = format == Format::Csv;
    let profiles = [LinkProfile::wifi(), LinkProfile::ble()];
    let cells = toll_table(&profiles, &cfg.table_speeds_mph).map_err(|e| CliError::Config(e.to_string()))?;
    let mut v = Verdict::new(cfg.scenario.clone());
    for c in &cells {
        v.check(format!("{}_{}mph_feasible", c.profile, c.speed_mph), c.satisfied());
    }
    let out = vec![
        ("toll", toll_table_render(&cells, csv)),
        ("cost", cost_table_render(&cfg.table_fee_percents, csv)),
        ("latency", latency_table_render(&profiles, csv)),
        ("crypto", crypto_table_render(device_crypto_overhead(), csv)),
    ];
    Ok(RunOutput { verdict: v, transcript: Vec::new(), tables: out })
}

pub fn write_outputs(out: &RunOutput, dir: &Path, format: Format) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut transcript = String::new();
    for line in &out.transcript {
        let _ = writeln!(transcript, "{line}");
    }
    fs::write(dir.join("transcript.log"), transcript)?;
    fs::write(dir.join("verdict.txt"), out.verdict.to_string())?;
    let json = serde_json::to_string_pretty(&out.verdict.to_json()).expect("json value serializes");
    fs::write(dir.join("verdict.json"), json + "\n")?;
    if !out.tables.is_empty() {
        let tables = dir.join("tables");
        fs::create_dir_all(&tables)?;
        let ext = match format {
            Format::Csv => "csv",
            Format::Text => "txt",
        };
        for (stem, body) in &out.tables {
            fs::write(tables.join(format!("{stem}.{ext}")), body)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ScenarioConfig {
        ScenarioConfig::parse(text).unwrap()
    }

    #[test]
    fn pay_flow_passes() {
        let out = execute(&cfg("scenario = \"pay\""), Format::Csv).unwrap();
        assert!(out.verdict.passed(), "{}", out.verdict);
        assert_eq!(out.verdict.finding("destination_received"), Some("0.9 BTC"));
        assert!(!out.transcript.is_empty());
    }

    #[test]
    fn close_by_each_party() {
        for closer in ["device", "gateway", "bridge"] {
            let out = execute(&cfg(&format!("scenario = \"close\"\ncloser = \"{closer}\"")), Format::Text).unwrap();
            assert!(out.verdict.passed(), "{closer}: {}", out.verdict);
        }
    }

    #[test]
    fn overdrawn_payment_fails_the_verdict() {
        let out = execute(&cfg("scenario = \"pay\"\npayment_sat = 2000000000"), Format::Csv).unwrap();
        assert!(!out.verdict.passed());
    }

    #[test]
    fn tables_produce_four_files() {
        let out = execute(&cfg("scenario = \"tables\""), Format::Csv).unwrap();
        let stems: Vec<_> = out.tables.iter().map(|(s, _)| *s).collect();
        assert_eq!(stems, ["toll", "cost", "latency", "crypto"]);
        assert!(out.verdict.passed());
    }
}
