//! Analytical latency, toll-gate feasibility and monthly cost models.

use std::fmt::Write as _;

use thiserror::Error;

/// Metres per second in one mile per hour.
pub const MPH_TO_MPS: f64 = 0.44704;

/// Device-side cost of sealing one message: AES 15 ms plus HMAC under 1 ms.
pub const DEFAULT_CRYPTO_OVERHEAD_S: f64 = 0.015;

/// Round trips between device and gateway in one payment.
pub const PAYMENT_EXCHANGES: u32 = 4;

pub const LN_PAYMENT_DELAY_S: f64 = 2.0;

/// Measured end-to-end payment times the profiles are anchored to.
pub const MEASURED_WIFI_TOTAL_S: f64 = 2.558;
pub const MEASURED_BLE_TOTAL_S: f64 = 5.722;

pub const TOLL_SPEEDS_MPH: [f64; 3] = [50.0, 60.0, 80.0];
pub const TOLL_FEE_PERCENTS: [u32; 3] = [5, 8, 10];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerfError {
    #[error("speed must be positive")]
    ZeroSpeed,
    #[error("{0} must be finite and non-negative")]
    Negative(&'static str),
}

pub fn device_crypto_overhead() -> f64 {
    DEFAULT_CRYPTO_OVERHEAD_S
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkProfile {
    pub name: String,
    pub device_gateway_rtt_s: f64,
    /// IoT gateway to cloud LN gateway, paid once per exchange.
    pub iot_gw_cloud_rtt_s: f64,
    pub range_m: f64,
    pub ln_payment_delay_s: f64,
    pub n_exchanges: u32,
    pub crypto_overhead_s: f64,
    /// Whatever the terms above leave unexplained. Zero in the stock profiles.
    pub residual_s: f64,
}

impl LinkProfile {
    fn uncalibrated(name: &str, rtt: f64, range_m: f64) -> Self {
        LinkProfile {
            name: name.to_string(),
            device_gateway_rtt_s: rtt,
            iot_gw_cloud_rtt_s: 0.0,
            range_m,
            ln_payment_delay_s: LN_PAYMENT_DELAY_S,
            n_exchanges: PAYMENT_EXCHANGES,
            crypto_overhead_s: DEFAULT_CRYPTO_OVERHEAD_S,
            residual_s: 0.0,
        }
    }

    fn base(name: &str, rtt: f64, range_m: f64) -> Self {
        let wifi = Self::uncalibrated("wifi", 0.009, 250.0);
        LinkProfile {
            iot_gw_cloud_rtt_s: calibrate_cloud_rtt(&wifi, MEASURED_WIFI_TOTAL_S),
            ..Self::uncalibrated(name, rtt, range_m)
        }
    }

    /// 802.11n: 9 ms round trip, 250 m range. Cloud RTT calibrated so the
    /// total matches the measured 2.558 s.
    pub fn wifi() -> Self {
        Self::base("wifi", 0.009, 250.0)
    }

    /// BLE: 0.8 s round trip, 220 m range, same cloud RTT as WiFi.
    pub fn ble() -> Self {
        Self::base("ble", 0.8, 220.0)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "wifi" => Some(Self::wifi()),
            "ble" | "bluetooth" => Some(Self::ble()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), PerfError> {
        let fields = [
            ("device_gateway_rtt_s", self.device_gateway_rtt_s),
            ("iot_gw_cloud_rtt_s", self.iot_gw_cloud_rtt_s),
            ("range_m", self.range_m),
            ("ln_payment_delay_s", self.ln_payment_delay_s),
            ("crypto_overhead_s", self.crypto_overhead_s),
            ("residual_s", self.residual_s),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(PerfError::Negative(name));
            }
        }
        Ok(())
    }
}

/// Seconds a vehicle spends inside `range_m` at `speed_mph`.
pub fn available_time(range_m: f64, speed_mph: f64) -> Result<f64, PerfError> {
    if !(range_m.is_finite() && range_m >= 0.0) {
        return Err(PerfError::Negative("range_m"));
    }
    if !(speed_mph.is_finite() && speed_mph > 0.0) {
        return Err(PerfError::ZeroSpeed);
    }
    Ok(range_m / (speed_mph * MPH_TO_MPS))
}

/// One decimal, as printed in the tables.
pub fn round_tenth(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

pub fn payment_latency(p: &LinkProfile) -> f64 {
    let n = f64::from(p.n_exchanges);
    n * (p.device_gateway_rtt_s + p.iot_gw_cloud_rtt_s) + p.ln_payment_delay_s + n * p.crypto_overhead_s + p.residual_s
}

/// Per-exchange cloud RTT that makes `profile` add up to `measured_total`.
pub fn calibrate_cloud_rtt(profile: &LinkProfile, measured_total: f64) -> f64 {
    let without = payment_latency(&LinkProfile { iot_gw_cloud_rtt_s: 0.0, ..profile.clone() });
    ((measured_total - without) / f64::from(profile.n_exchanges.max(1))).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostParams {
    pub passes_per_day: u64,
    pub toll_per_pass_cents: u64,
    pub gateway_fee_percent: u32,
    pub days: u64,
}

impl CostParams {
    /// Two passes a day at $1.50 over 30 days.
    pub fn toll_example(gateway_fee_percent: u32) -> Self {
        CostParams { passes_per_day: 2, toll_per_pass_cents: 150, gateway_fee_percent, days: 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonthlyCost {
    pub fees_cents: u64,
    pub total_cents: u64,
}

/// Gateway fees are rounded half up to the cent.
pub fn monthly_cost(p: &CostParams) -> MonthlyCost {
    let base = p.passes_per_day * p.toll_per_pass_cents * p.days;
    let fees_cents = (base * u64::from(p.gateway_fee_percent) + 50) / 100;
    MonthlyCost { fees_cents, total_cents: base + fees_cents }
}

pub fn format_usd(cents: u64) -> String {
    format!("${}.{:02}", cents / 100, cents % 100)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TollCell {
    pub profile: String,
    pub speed_mph: f64,
    pub available_s: f64,
    pub latency_s: f64,
}

impl TollCell {
    pub fn satisfied(&self) -> bool {
        self.latency_s <= self.available_s
    }
}

/// Available time and feasibility for every (speed, profile) pair,
/// speed-major.
pub fn toll_table(profiles: &[LinkProfile], speeds: &[f64]) -> Result<Vec<TollCell>, PerfError> {
    let mut cells = Vec::new();
    for &speed in speeds {
        for p in profiles {
            p.validate()?;
            cells.push(TollCell {
                profile: p.name.clone(),
                speed_mph: speed,
                available_s: available_time(p.range_m, speed)?,
                latency_s: payment_latency(p),
            });
        }
    }
    Ok(cells)
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "Yes"
    } else {
        "No"
    }
}

fn render(rows: &[Vec<String>], csv: bool) -> String {
    let mut out = String::new();
    if csv {
        for r in rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        return out;
    }
    let widths: Vec<usize> = (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(cell, w)| format!("{cell:>w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

fn toll_rows(cells: &[TollCell], profiles: &[String]) -> Vec<Vec<String>> {
    let mut header = vec!["speed_mph".to_string()];
    for p in profiles {
        header.push(format!("{p}_available_s"));
        header.push(format!("{p}_satisfied"));
    }
    let mut rows = vec![header];
    let mut speeds: Vec<f64> = cells.iter().map(|c| c.speed_mph).collect();
    speeds.dedup();
    for s in speeds {
        let mut row = vec![format!("{s}")];
        for p in profiles {
            let c = cells.iter().find(|c| c.speed_mph == s && &c.profile == p).expect("full grid");
            row.push(format!("{:.1}", round_tenth(c.available_s)));
            row.push(yes_no(c.satisfied()).to_string());
        }
        rows.push(row);
    }
    rows
}

pub fn toll_table_render(cells: &[TollCell], csv: bool) -> String {
    let mut names: Vec<String> = Vec::new();
    for c in cells {
        if !names.contains(&c.profile) {
            names.push(c.profile.clone());
        }
    }
    render(&toll_rows(cells, &names), csv)
}

pub fn cost_table_render(percents: &[u32], csv: bool) -> String {
    let mut rows = vec![vec!["fee_percent".to_string(), "monthly_fees_usd".into(), "monthly_total_usd".into()]];
    for &k in percents {
        let c = monthly_cost(&CostParams::toll_example(k));
        let usd = |cents: u64| if csv { format!("{}.{:02}", cents / 100, cents % 100) } else { format_usd(cents) };
        rows.push(vec![k.to_string(), usd(c.fees_cents), usd(c.total_cents)]);
    }
    render(&rows, csv)
}

pub fn latency_table_render(profiles: &[LinkProfile], csv: bool) -> String {
    let mut rows = vec![vec![
        "profile".to_string(),
        "device_gateway_rtt_s".into(),
        "iot_gw_cloud_rtt_s".into(),
        "exchanges".into(),
        "crypto_overhead_s".into(),
        "ln_payment_delay_s".into(),
        "total_s".into(),
    ]];
    for p in profiles {
        rows.push(vec![
            p.name.clone(),
            format!("{:.3}", p.device_gateway_rtt_s),
            format!("{:.4}", p.iot_gw_cloud_rtt_s),
            p.n_exchanges.to_string(),
            format!("{:.3}", p.crypto_overhead_s),
            format!("{:.3}", p.ln_payment_delay_s),
            format!("{:.3}", payment_latency(p)),
        ]);
    }
    render(&rows, csv)
}

/// Device computation costs consumed as configuration, in milliseconds.
pub fn crypto_table_render(overhead_s: f64, csv: bool) -> String {
    let ms = format!("{}", (overhead_s * 1000.0).round());
    let rows = vec![
        vec!["aes_encryption_ms".to_string(), "hmac_ms".into(), "total_ms".into()],
        vec![ms.clone(), "<1".into(), ms],
    ];
    render(&rows, csv)
}
