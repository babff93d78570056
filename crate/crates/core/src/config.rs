//! Scenario parameterization.
//!
//! The config is a flat key/value table so every field can be set from a
//! TOML file or overridden by a command-line flag carrying the same name.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How UEs are dropped at the start of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Placement {
    /// Uniform in a disc of radius ISD centered at the origin.
    Uniform,
    /// `xi` gNBs are excluded; UEs cluster around the remaining ones.
    NonUniform(usize),
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Placement::Uniform => write!(f, "uniform"),
            Placement::NonUniform(xi) => write!(f, "non-uniform:{xi}"),
        }
    }
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("uniform") {
            return Ok(Placement::Uniform);
        }
        let rest = s
            .strip_prefix("non-uniform:")
            .or_else(|| s.strip_prefix("nonuniform:"))
            .ok_or_else(|| Error::config("placement", format!("unrecognized placement `{s}`")))?;
        let xi = rest
            .parse()
            .map_err(|_| Error::config("placement", format!("bad exclusion count `{rest}`")))?;
        Ok(Placement::NonUniform(xi))
    }
}

impl TryFrom<String> for Placement {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Placement> for String {
    fn from(p: Placement) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_gnb: usize,
    /// meters
    pub inter_site_distance: f64,
    /// Hz
    pub carrier_freq: f64,
    /// Hz
    pub bandwidth: f64,
    pub n_ue_per_gnb: usize,
    /// seconds
    pub sim_duration: f64,
    /// seconds
    pub control_period: f64,
    /// seconds
    pub slot_duration: f64,
    /// m/s, `[min, max]`
    pub ue_speed_range: [f64; 2],
    pub placement: Placement,
    pub seed: u64,
    /// dB; a UE is in RLF when its serving SINR is strictly below this.
    pub sinr_rlf_threshold: f64,
    /// watts
    pub tx_power_per_cell: f64,

    // Channel and link abstraction.
    pub pathloss_exponent: f64,
    /// meters
    pub reference_distance: f64,
    pub shadowing_std_db: f64,
    pub noise_figure_db: f64,
    pub n_prb: u32,
    pub symbols_per_slot: u32,
    pub subcarriers_per_prb: u32,
    pub phy_overhead_fraction: f64,

    // Handover.
    /// seconds
    pub ttt_base: f64,
    /// seconds
    pub ttt_min: f64,
    pub hysteresis_db: f64,
    /// SINR advantage (dB) at which the effective TTT reaches `ttt_min`.
    pub ttt_full_reduction_db: f64,

    // Traffic and mobility.
    /// bits/s
    pub udp_bursty_rate: f64,
    /// bits/s
    pub tcp_bursty_high_rate: f64,
    /// bits/s
    pub tcp_bursty_low_rate: f64,
    /// seconds
    pub burst_mean_on: f64,
    /// seconds
    pub burst_mean_off: f64,
    /// seconds; mean time between heading changes of the random walk.
    pub walk_turn_mean: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_gnb: 7,
            inter_site_distance: 1700.0,
            carrier_freq: 850e6,
            bandwidth: 20e6,
            n_ue_per_gnb: 9,
            sim_duration: 10.0,
            control_period: 0.1,
            slot_duration: 0.001,
            ue_speed_range: [2.0, 4.0],
            placement: Placement::Uniform,
            seed: 1,
            sinr_rlf_threshold: -5.0,
            tx_power_per_cell: 1.0,

            pathloss_exponent: 3.0,
            reference_distance: 1.0,
            shadowing_std_db: 4.0,
            noise_figure_db: 7.0,
            n_prb: 106,
            symbols_per_slot: 14,
            subcarriers_per_prb: 12,
            phy_overhead_fraction: 0.10,

            ttt_base: 0.256,
            ttt_min: 0.016,
            hysteresis_db: 3.0,
            ttt_full_reduction_db: 10.0,

            udp_bursty_rate: 20e6,
            tcp_bursty_high_rate: 750e3,
            tcp_bursty_low_rate: 150e3,
            burst_mean_on: 0.5,
            burst_mean_off: 0.5,
            walk_turn_mean: 1.0,
        }
    }
}

/// Returns the integer `n` with `a ≈ n·b`, if one exists.
fn integer_ratio(a: f64, b: f64) -> Option<u64> {
    let r = a / b;
    let n = r.round();
    if n >= 0.0 && (r - n).abs() < 1e-6 {
        Some(n as u64)
    } else {
        None
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Parse(format!("scenario config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Names of every overridable field, sorted.
    pub fn field_names() -> Vec<String> {
        match toml::Value::try_from(ScenarioConfig::default()) {
            Ok(toml::Value::Table(t)) => t.keys().cloned().collect(),
            _ => unreachable!("config serializes to a table"),
        }
    }

    /// Replaces one field by name. `raw` is parsed as a TOML value, falling
    /// back to a plain string (so `--placement uniform` works unquoted).
    pub fn set_field(&mut self, name: &str, raw: &str) -> Result<()> {
        let mut table = match toml::Value::try_from(&*self) {
            Ok(toml::Value::Table(t)) => t,
            _ => unreachable!("config serializes to a table"),
        };
        if !table.contains_key(name) {
            return Err(Error::config(name, "no such field"));
        }
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        // Integers given for float fields are accepted.
        let value = match (&table[name], value) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        table.insert(name.to_string(), value);
        let updated: ScenarioConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::config(name, e.to_string()))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_gnb < 1 {
            return Err(Error::config("n_gnb", "must be at least 1"));
        }
        if self.n_gnb > 16 {
            return Err(Error::config("n_gnb", "action masks support at most 16 cells"));
        }
        let positive = [
            ("inter_site_distance", self.inter_site_distance),
            ("carrier_freq", self.carrier_freq),
            ("bandwidth", self.bandwidth),
            ("control_period", self.control_period),
            ("slot_duration", self.slot_duration),
            ("tx_power_per_cell", self.tx_power_per_cell),
            ("reference_distance", self.reference_distance),
            ("pathloss_exponent", self.pathloss_exponent),
            ("ttt_base", self.ttt_base),
            ("ttt_min", self.ttt_min),
            ("ttt_full_reduction_db", self.ttt_full_reduction_db),
            ("burst_mean_on", self.burst_mean_on),
            ("burst_mean_off", self.burst_mean_off),
            ("walk_turn_mean", self.walk_turn_mean),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, format!("must be positive and finite, got {v}")));
            }
        }
        let non_negative = [
            ("sim_duration", self.sim_duration),
            ("shadowing_std_db", self.shadowing_std_db),
            ("hysteresis_db", self.hysteresis_db),
            ("phy_overhead_fraction", self.phy_overhead_fraction),
            ("udp_bursty_rate", self.udp_bursty_rate),
            ("tcp_bursty_high_rate", self.tcp_bursty_high_rate),
            ("tcp_bursty_low_rate", self.tcp_bursty_low_rate),
        ];
        for (field, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, format!("must be non-negative and finite, got {v}")));
            }
        }
        if !self.sinr_rlf_threshold.is_finite() || !self.noise_figure_db.is_finite() {
            return Err(Error::config("sinr_rlf_threshold", "must be finite"));
        }
        if self.ttt_min > self.ttt_base {
            return Err(Error::config("ttt_min", "must not exceed ttt_base"));
        }
        let [lo, hi] = self.ue_speed_range;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
            return Err(Error::config("ue_speed_range", "need 0 <= min <= max"));
        }
        if self.n_prb == 0 || self.symbols_per_slot == 0 || self.subcarriers_per_prb == 0 {
            return Err(Error::config("n_prb", "PRB dimensioning must be non-zero"));
        }
        if integer_ratio(self.control_period, self.slot_duration).filter(|&n| n >= 1).is_none() {
            return Err(Error::config(
                "control_period",
                "must be an integer multiple of slot_duration",
            ));
        }
        if integer_ratio(self.sim_duration, self.control_period).is_none() {
            return Err(Error::config(
                "sim_duration",
                "must be an integer multiple of control_period",
            ));
        }
        if let Placement::NonUniform(xi) = self.placement {
            if xi == 0 || xi >= self.n_gnb {
                return Err(Error::config(
                    "placement",
                    format!("exclusion count {xi} must be in 1..{}", self.n_gnb),
                ));
            }
        }
        Ok(())
    }

    pub fn slots_per_interval(&self) -> u64 {
        integer_ratio(self.control_period, self.slot_duration).expect("validated")
    }

    pub fn n_intervals(&self) -> usize {
        integer_ratio(self.sim_duration, self.control_period).expect("validated") as usize
    }

    pub fn n_ues(&self) -> usize {
        self.n_gnb * self.n_ue_per_gnb
    }
}
