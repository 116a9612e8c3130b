//! Adversarial scenarios run against full simulated worlds, and a watchtower.
//!
//! Every scenario is a pure function of its [`WorldConfig`] (seed included)
//! and returns a [`Verdict`]. One adversary per scenario: no role is ever
//! handed a second party's keys.

mod mitm;
mod revoked;
mod theft;
mod watchtower;

use std::fmt;

use serde_json::json;

pub use mitm::{run_envelope_attacks, run_mitm, MitmKind};
pub use revoked::{run_revoked_broadcast, Outcome, RevokedBroadcast};
pub use theft::run_theft_attempt;
pub use watchtower::{TowerEvent, WatchedChannel, Watchtower};

use crate::agents::{AgentId, FlowError, World, WorldConfig};
use crate::chain::{Chain, OutPoint, SpendCondition, Txid};
use crate::crypto::{verify, PublicKey};
use crate::Amount;

pub const DEFAULT_CAPACITY: Amount = Amount::from_btc(10);
pub const DEFAULT_PAYMENT: Amount = Amount::from_btc(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adversary {
    Gateway,
    Bridge,
    Network,
}

impl Adversary {
    pub fn agent(self) -> Option<AgentId> {
        match self {
            Adversary::Gateway => Some(AgentId::Gateway),
            Adversary::Bridge => Some(AgentId::Bridge),
            Adversary::Network => None,
        }
    }
}

impl fmt::Display for Adversary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Adversary::Gateway => "gateway",
            Adversary::Bridge => "bridge",
            Adversary::Network => "network",
        })
    }
}

/// Result of one scenario: named checks plus free-form findings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub scenario: String,
    pub checks: Vec<(String, bool)>,
    pub findings: Vec<(String, String)>,
}

impl Verdict {
    pub fn new(scenario: impl Into<String>) -> Self {
        Verdict { scenario: scenario.into(), checks: Vec::new(), findings: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|(_, ok)| *ok)
    }

    pub fn check(&mut self, name: impl Into<String>, ok: bool) -> bool {
        self.checks.push((name.into(), ok));
        ok
    }

    pub fn note(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.findings.push((key.into(), value.to_string()));
    }

    pub fn finding(&self, key: &str) -> Option<&str> {
        self.findings.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn failed_checks(&self) -> Vec<&str> {
        self.checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| n.as_str()).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "scenario": self.scenario,
            "passed": self.passed(),
            "checks": self.checks.iter().map(|(n, ok)| json!({"name": n, "ok": ok})).collect::<Vec<_>>(),
            "findings": self.findings.iter().map(|(k, v)| json!({"key": k, "value": v})).collect::<Vec<_>>(),
        })
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} {}", if self.passed() { "PASS" } else { "FAIL" }, self.scenario)?;
        for (name, ok) in &self.checks {
            writeln!(f, "  check {name}: {}", if *ok { "ok" } else { "FAILED" })?;
        }
        for (k, v) in &self.findings {
            writeln!(f, "  {k} = {v}")?;
        }
        Ok(())
    }
}

/// A named, config-selectable attack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackScenario {
    pub name: String,
    pub adversary: Adversary,
    pub attack: Attack,
    pub watchtower: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Attack {
    RevokedBroadcast { state_index: u64, payments: usize, victim_online: bool, watchtower_delay: u64 },
    Theft { attempts: usize },
    Mitm { kind: MitmKind, envelopes: usize },
}

impl AttackScenario {
    /// Built-in scenarios by name.
    pub fn named(name: &str) -> Option<AttackScenario> {
        let revoked = |adversary, state_index, payments, victim_online, watchtower, watchtower_delay| AttackScenario {
            name: name.to_string(),
            adversary,
            attack: Attack::RevokedBroadcast { state_index, payments, victim_online, watchtower_delay },
            watchtower,
        };
        let s = match name {
            "revoked-gateway" => revoked(Adversary::Gateway, 1, 2, true, false, 0),
            "revoked-gateway-offline" => revoked(Adversary::Gateway, 1, 2, false, false, 0),
            "revoked-gateway-watchtower" => revoked(Adversary::Gateway, 1, 2, false, true, 0),
            "revoked-gateway-state0" => revoked(Adversary::Gateway, 0, 1, true, false, 0),
            "latest-gateway" => revoked(Adversary::Gateway, 2, 2, true, false, 0),
            "revoked-bridge" => revoked(Adversary::Bridge, 2, 3, true, false, 0),
            "revoked-bridge-offline" => revoked(Adversary::Bridge, 2, 3, false, false, 0),
            "revoked-bridge-watchtower" => revoked(Adversary::Bridge, 2, 3, false, true, 0),
            "watchtower-late" => revoked(Adversary::Gateway, 1, 2, false, true, u64::MAX),
            "theft" => AttackScenario {
                name: name.to_string(),
                adversary: Adversary::Gateway,
                attack: Attack::Theft { attempts: 1000 },
                watchtower: false,
            },
            "mitm-tamper" | "mitm-replay" | "mitm-eavesdrop" | "mitm-mixed" => AttackScenario {
                name: name.to_string(),
                adversary: Adversary::Network,
                attack: Attack::Mitm {
                    kind: match name {
                        "mitm-tamper" => MitmKind::Tamper,
                        "mitm-replay" => MitmKind::Replay,
                        "mitm-eavesdrop" => MitmKind::Eavesdrop,
                        _ => MitmKind::Mixed,
                    },
                    envelopes: 1000,
                },
                watchtower: false,
            },
            _ => return None,
        };
        Some(s)
    }

    pub const NAMES: [&'static str; 14] = [
        "revoked-gateway",
        "revoked-gateway-offline",
        "revoked-gateway-watchtower",
        "revoked-gateway-state0",
        "latest-gateway",
        "revoked-bridge",
        "revoked-bridge-offline",
        "revoked-bridge-watchtower",
        "watchtower-late",
        "theft",
        "mitm-tamper",
        "mitm-replay",
        "mitm-eavesdrop",
        "mitm-mixed",
    ];

    pub fn run(&self, config: &WorldConfig) -> Verdict {
        let mut v = match &self.attack {
            Attack::RevokedBroadcast { state_index, payments, victim_online, watchtower_delay } => {
                let plan = RevokedBroadcast {
                    adversary: self.adversary,
                    state_index: *state_index,
                    payments: *payments,
                    victim_online: *victim_online,
                    watchtower: self.watchtower,
                    watchtower_delay: *watchtower_delay,
                    expected: None,
                };
                run_revoked_broadcast(config, &plan)
            }
            Attack::Theft { attempts } => run_theft_attempt(config, *attempts),
            Attack::Mitm { kind, envelopes } => run_mitm(config, *kind, *envelopes),
        };
        v.scenario = self.name.clone();
        v
    }
}

/// Opens a channel and makes `payments` payments with the default amounts.
pub(crate) fn operational_world(config: &WorldConfig, payments: usize) -> Result<World, FlowError> {
    let mut w = World::new(config.clone());
    w.iot_open_channel(DEFAULT_CAPACITY)?;
    for _ in 0..payments {
        w.iot_send_payment(DEFAULT_PAYMENT, None)?;
    }
    Ok(w)
}

fn has_valid_sig(tx_id: &Txid, witness: &crate::chain::Witness, key: &PublicKey) -> bool {
    witness.signature_of(key).is_some_and(|sig| verify(&tx_id.0, sig, key))
}

/// Accepted submissions spending `funding` that lack a valid signature from
/// any of `parties`. Empty when the gate held.
pub fn signature_gate_violations(chain: &Chain, funding: OutPoint, parties: &[PublicKey]) -> Vec<Txid> {
    chain
        .submissions()
        .iter()
        .filter_map(|s| s.result.as_ref().ok().map(|txid| (txid, &s.tx)))
        .filter(|(txid, tx)| {
            tx.inputs
                .iter()
                .any(|i| i.prevout == funding && !parties.iter().all(|k| has_valid_sig(txid, &i.witness, k)))
        })
        .map(|(txid, _)| *txid)
        .collect()
}

/// Outputs only the device can ultimately spend: the funding multisig and
/// its own (possibly timelocked) balance outputs.
fn device_controls(condition: &SpendCondition, device: &PublicKey) -> bool {
    match condition {
        SpendCondition::MultiSig { pubkeys, .. } => pubkeys.contains(device),
        SpendCondition::RelativeTimelock { inner, .. } => device_controls(inner, device),
        _ => false,
    }
}

/// Accepted submissions moving device-controlled outputs without a valid
/// device signature. Empty when device funds were safe.
pub fn device_fund_violations(chain: &Chain, device: &PublicKey) -> Vec<Txid> {
    chain
        .submissions()
        .iter()
        .filter_map(|s| s.result.as_ref().ok().map(|txid| (txid, &s.tx)))
        .filter(|(txid, tx)| {
            tx.inputs.iter().any(|i| {
                let Some(prev) = chain.find_tx(&i.prevout.txid) else { return false };
                let Some(out) = prev.outputs.get(i.prevout.vout as usize) else { return false };
                device_controls(&out.condition, device) && !has_valid_sig(txid, &i.witness, device)
            })
        })
        .map(|(txid, _)| *txid)
        .collect()
}

/// Signature gate and device-fund safety over everything `w` submitted,
/// recorded as checks on `v`.
pub fn check_gates(v: &mut Verdict, w: &World) {
    let Some(ch) = w.agents.gateway.channel() else { return };
    let p = ch.params();
    let gate = signature_gate_violations(&w.chain, ch.funding(), &[p.iot_pub, p.gateway_pub, p.bridge_pub]);
    v.check("signature_gate", gate.is_empty());
    let device = device_fund_violations(&w.chain, &p.iot_pub);
    v.check("device_fund_safety", device.is_empty());
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_needs_at_least_one_check() {
        let mut v = Verdict::new("x");
        assert!(!v.passed());
        v.check("a", true);
        assert!(v.passed());
        v.check("b", false);
        assert!(!v.passed());
        assert_eq!(v.failed_checks(), vec!["b"]);
    }

    #[test]
    fn verdict_text_starts_with_status() {
        let mut v = Verdict::new("demo");
        v.check("a", true);
        v.note("k", 3);
        let text = v.to_string();
        assert!(text.starts_with("PASS demo\n"));
        assert!(text.contains("  k = 3\n"));
        assert_eq!(v.to_json()["passed"], true);
    }

    #[test]
    fn every_listed_name_resolves() {
        for name in AttackScenario::NAMES {
            assert_eq!(AttackScenario::named(name).map(|s| s.name), Some(name.to_string()));
        }
        assert!(AttackScenario::named("nope").is_none());
    }

    #[test]
    fn honest_flows_pass_both_gates() {
        let mut w = operational_world(&WorldConfig::default(), 2).unwrap();
        w.iot_close_channel().unwrap();
        let mut v = Verdict::new("honest");
        check_gates(&mut v, &w);
        assert_eq!(v.checks.len(), 2);
        assert!(v.passed(), "{v}");
    }
}
