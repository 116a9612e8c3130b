//! Flat-key scenario configuration.

use std::path::Path;

use iotgate::agents::{LinkDelays, WorldConfig};
use iotgate::chain::ChainParams;
use iotgate::perf::LinkProfile;
use iotgate::threat::AttackScenario;
use iotgate::Amount;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scenario {
    Open,
    Pay,
    Close,
    Threat(String),
    Tables,
}

impl Scenario {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "open" => Ok(Scenario::Open),
            "pay" => Ok(Scenario::Pay),
            "close" => Ok(Scenario::Close),
            "tables" => Ok(Scenario::Tables),
            _ => match s.strip_prefix("threat:") {
                Some(name) if AttackScenario::named(name).is_some() => Ok(Scenario::Threat(name.to_string())),
                Some(name) => Err(CliError::Config(format!(
                    "unknown threat scenario `{name}`; known: {}",
                    AttackScenario::NAMES.join(", ")
                ))),
                None => Err(CliError::Config(format!(
                    "unknown scenario `{s}`; expected open, pay, close, tables or threat:<name>"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Closer {
    Device,
    Gateway,
    Bridge,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub scenario: String,
    pub confirmation_depth: u32,
    pub onchain_fee_sat: u64,
    pub device_wallet_sat: u64,
    pub capacity_sat: u64,
    pub to_self_delay_k: u32,
    pub fee_percent: u32,
    pub htlc_timeout_w: u64,
    pub link_profile: String,
    pub payments: usize,
    pub payment_sat: u64,
    pub destination: String,
    pub closer: Closer,
    /// Randomized attempts for theft and envelope attacks.
    pub attempts: usize,
    pub table_speeds_mph: Vec<f64>,
    pub table_fee_percents: Vec<u32>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let world = WorldConfig::default();
        ScenarioConfig {
            seed: world.seed,
            scenario: "pay".into(),
            confirmation_depth: world.chain.confirmation_depth,
            onchain_fee_sat: world.chain.onchain_fee.as_sat(),
            device_wallet_sat: world.device_wallet.as_sat(),
            capacity_sat: Amount::from_btc(10).as_sat(),
            to_self_delay_k: world.to_self_delay_k,
            fee_percent: world.fee_percent,
            htlc_timeout_w: world.htlc_timeout_w,
            link_profile: "wifi".into(),
            payments: 1,
            payment_sat: Amount::from_btc(1).as_sat(),
            destination: world.destination,
            closer: Closer::Device,
            attempts: 1000,
            table_speeds_mph: iotgate::perf::TOLL_SPEEDS_MPH.to_vec(),
            table_fee_percents: iotgate::perf::TOLL_FEE_PERCENTS.to_vec(),
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        Scenario::parse(&self.scenario)?;
        if LinkProfile::by_name(&self.link_profile).is_none() {
            return bad(format!("unknown link_profile `{}`; expected wifi or ble", self.link_profile));
        }
        if self.capacity_sat == 0 || self.payment_sat == 0 {
            return bad("capacity_sat and payment_sat must be positive".into());
        }
        if self.fee_percent > 100 {
            return bad("fee_percent must be at most 100".into());
        }
        if self.to_self_delay_k == 0 {
            return bad("to_self_delay_k must be at least 1".into());
        }
        if self.table_speeds_mph.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("table_speeds_mph must all be positive".into());
        }
        Ok(())
    }

    pub fn scenario(&self) -> Scenario {
        Scenario::parse(&self.scenario).expect("validated")
    }

    pub fn profile(&self) -> LinkProfile {
        LinkProfile::by_name(&self.link_profile).expect("validated")
    }

    pub fn world(&self) -> WorldConfig {
        let chain = ChainParams {
            onchain_fee: Amount::from_sat(self.onchain_fee_sat),
            confirmation_depth: self.confirmation_depth,
        };
        let one_way_ms = (self.profile().device_gateway_rtt_s * 500.0).round() as u64;
        WorldConfig {
            seed: self.seed,
            chain,
            device_wallet: Amount::from_sat(self.device_wallet_sat),
            to_self_delay_k: self.to_self_delay_k,
            htlc_timeout_w: self.htlc_timeout_w,
            fee_percent: self.fee_percent,
            confirmation_timeout_blocks: u64::from(self.confirmation_depth) + 12,
            delays: LinkDelays { device_gateway_ms: one_way_ms, ..LinkDelays::default() },
            destination: self.destination.clone(),
            ..WorldConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        assert_eq!(ScenarioConfig::parse("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(matches!(ScenarioConfig::parse("sede = 3"), Err(CliError::Config(_))));
    }

    #[test]
    fn scenario_names() {
        assert_eq!(Scenario::parse("threat:theft").unwrap(), Scenario::Threat("theft".into()));
        assert!(Scenario::parse("threat:nope").is_err());
        assert!(Scenario::parse("dance").is_err());
    }

    #[test]
    fn ble_profile_slows_the_device_link() {
        let cfg = ScenarioConfig::parse("link_profile = \"ble\"").unwrap();
        assert_eq!(cfg.world().delays.device_gateway_ms, 400);
        assert_eq!(ScenarioConfig::default().world().delays.device_gateway_ms, 5);
    }
}
