//! Scenario configuration: a flat key-value file with dotted section keys.
//!
//! ```text
//! scenario = "KEY_RUN"
//! seed = 7
//! clock.frequency_hz = 1
//! channel.length_km = 5
//! ```
//!
//! The file is TOML, so `[clock]` tables work too; keys are flattened to their
//! dotted form before matching. Omitted keys keep their defaults, unknown keys
//! are rejected.
//!
//! | key | default | accepted |
//! |---|---|---|
//! | `scenario` | `KEY_RUN` | scenario name |
//! | `output_dir` | `out` | path |
//! | `seed` | 0 | u64 |
//! | `duration_s` | 300 | > 0, at least one full cycle |
//! | `evoa_db` | 21.55 | >= 0 |
//! | `v_pi` | 4 | > 0 |
//! | `bin_width_s` | 0.01 | >= 1 ps |
//! | `qber_sample_fraction` | 0.1 | (0, 1) |
//! | `qber_window_s` | 30 | > 0 |
//! | `clock.frequency_hz` | 10 | > 0 |
//! | `clock.amplitude_v` | 4 | any |
//! | `clock.duty` | 0.5 | (0, 1) |
//! | `source.cw_power_dbm` | 0 | finite |
//! | `source.wavelength_nm` | 1550 | > 0 |
//! | `channel.length_km` | 5 | >= 0 |
//! | `channel.alpha_db_per_km` | 0.141 | >= 0 |
//! | `channel.reference_length_km` | 5 | >= 0 |
//! | `drift.t_stable_s` | 150 | >= 0 |
//! | `drift.sigma_rad_per_sqrt_s` | 0.002 | >= 0 |
//! | `drift.theta_max` | pi/4 | >= 0 |
//! | `drift.enabled` | true | bool |
//! | `detector.signal_rate_h` | 20000 | > leak |
//! | `detector.leak_rate_v` | 7500 | > dark |
//! | `detector.dark_rate` | 2500 | >= 0 |
//! | `modulator.extinction_db` | 30 | > 0 |
//! | `modulator.gate_open_fraction` | 0.5 | 1 - clock.duty |
//! | `thresholds.t_signal` | calibrated | u64, with `t_hv` |
//! | `thresholds.t_hv` | calibrated | u64 > `t_signal` |
//! | `timing.sample_offset_s` | mid open window | [0, period) |
//! | `sweep.v_min` | 0 | finite |
//! | `sweep.v_max` | 8 | >= `v_min` |
//! | `sweep.v_step` | 0.1 | > 0 |
//! | `sweep.v_offset` | 0 | finite |
//! | `sweep.total_cps` | 31000 | > 0 |
//! | `pulse_train.peak_rate_cps` | 1.2e6 | > 0 |
//! | `pulse_train.short_length_km` | 0.001 | >= 0 |
//! | `cw.h_rate_cps` | 45000 | > 0 |
//! | `trace.duration_s` | 5 | > 0 |
//! | `pulsed.mcss_start_s` | 1.2 | [0, `trace.duration_s`), multiple of `bin_width_s` |
//! | `gating.span_s` | 0.9 | > 0 |

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;
use toml::Value;

use crate::devices::DriftSpec;
use crate::error::Error;
use crate::optics::PowerLevel;
use crate::protocol::{ClassifierThresholds, SessionConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unknown key `{0}`")]
    UnknownKey(String),

    #[error("key `{key}`: expected {expected}")]
    Type { key: String, expected: &'static str },

    #[error("key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl From<Error> for ConfigError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { name, reason } => ConfigError::Invalid {
                key: name.to_string(),
                reason,
            },
            other => ConfigError::Invalid {
                key: "session".into(),
                reason: other.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    PulseTrain,
    VoltageSweep,
    PhaseModCw,
    PulsedRandom,
    GatingDemo,
    KeyRun,
    QberRun,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::PulseTrain,
        Scenario::VoltageSweep,
        Scenario::PhaseModCw,
        Scenario::PulsedRandom,
        Scenario::GatingDemo,
        Scenario::KeyRun,
        Scenario::QberRun,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::PulseTrain => "PULSE_TRAIN",
            Scenario::VoltageSweep => "VOLTAGE_SWEEP",
            Scenario::PhaseModCw => "PHASE_MOD_CW",
            Scenario::PulsedRandom => "PULSED_RANDOM",
            Scenario::GatingDemo => "GATING_DEMO",
            Scenario::KeyRun => "KEY_RUN",
            Scenario::QberRun => "QBER_RUN",
        }
    }

    /// Lower-case, dash-separated form used for subcommands and directories.
    pub fn slug(self) -> String {
        self.name().to_ascii_lowercase().replace('_', "-")
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Scenario::ALL.into_iter().find(|sc| sc.name() == norm).ok_or_else(|| {
            let names: Vec<_> = Scenario::ALL.iter().map(|s| s.name()).collect();
            format!("unknown scenario `{s}`; expected one of {}", names.join(", "))
        })
    }
}

/// Parameters that only some scenarios use.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    pub sweep_v_min: f64,
    pub sweep_v_max: f64,
    pub sweep_v_step: f64,
    pub sweep_v_offset: f64,
    /// H + V count rate with the gate open, used by the sweep.
    pub sweep_total_cps: f64,
    /// Open-gate rate at the calibration length.
    pub pulse_train_peak_rate_cps: f64,
    pub pulse_train_short_length_km: f64,
    /// H-arm rate for CW light at 0 V.
    pub cw_h_rate_cps: f64,
    pub trace_duration_s: f64,
    /// When the clock starts driving the modulators; light is CW before.
    pub pulsed_mcss_start_s: f64,
    pub gating_span_s: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            sweep_v_min: 0.0,
            sweep_v_max: 8.0,
            sweep_v_step: 0.1,
            sweep_v_offset: 0.0,
            sweep_total_cps: 3.1e4,
            pulse_train_peak_rate_cps: 1.2e6,
            pulse_train_short_length_km: 0.001,
            cw_h_rate_cps: 4.5e4,
            trace_duration_s: 5.0,
            pulsed_mcss_start_s: 1.2,
            gating_span_s: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub output_dir: PathBuf,
    pub session: SessionConfig<f64>,
    pub params: ScenarioParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: Scenario::KeyRun,
            output_dir: PathBuf::from("out"),
            session: SessionConfig::default(),
            params: ScenarioParams::default(),
        }
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.session.validate()?;
        let p = &self.params;
        let finite = |key: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(key, "must be finite"))
            }
        };
        finite("sweep.v_min", p.sweep_v_min)?;
        finite("sweep.v_offset", p.sweep_v_offset)?;
        if !(p.sweep_v_max >= p.sweep_v_min) || !p.sweep_v_max.is_finite() {
            return Err(invalid("sweep.v_max", "must be finite and >= sweep.v_min"));
        }
        if !(p.sweep_v_step > 0.0) {
            return Err(invalid("sweep.v_step", "must be > 0"));
        }
        if (p.sweep_v_max - p.sweep_v_min) / p.sweep_v_step > 1e6 {
            return Err(invalid("sweep.v_step", "sweep would exceed 10^6 points"));
        }
        for (key, v) in [
            ("sweep.total_cps", p.sweep_total_cps),
            ("pulse_train.peak_rate_cps", p.pulse_train_peak_rate_cps),
            ("cw.h_rate_cps", p.cw_h_rate_cps),
            ("trace.duration_s", p.trace_duration_s),
            ("gating.span_s", p.gating_span_s),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(key, "must be finite and > 0"));
            }
        }
        if !(p.pulse_train_short_length_km >= 0.0) {
            return Err(invalid("pulse_train.short_length_km", "must be >= 0"));
        }
        if !(p.pulsed_mcss_start_s >= 0.0 && p.pulsed_mcss_start_s < p.trace_duration_s) {
            return Err(invalid("pulsed.mcss_start_s", "must lie in [0, trace.duration_s)"));
        }
        let w = self.session.bin_width().0;
        if !crate::Picos::from_secs(p.pulsed_mcss_start_s).0.is_multiple_of(w) {
            return Err(invalid("pulsed.mcss_start_s", "must be a multiple of bin_width_s"));
        }
        Ok(())
    }

    /// Applies one dotted key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &Value) -> Result<(), ConfigError> {
        let s = &mut self.session;
        let p = &mut self.params;
        match key {
            "scenario" => self.scenario = as_str(key, value)?.parse().map_err(|e| invalid(key, e))?,
            "output_dir" => self.output_dir = PathBuf::from(as_str(key, value)?),
            "seed" => s.seed = as_u64(key, value)?,
            "duration_s" => s.duration_s = as_f64(key, value)?,
            "evoa_db" => s.evoa_db = as_f64(key, value)?,
            "v_pi" => s.v_pi = as_f64(key, value)?,
            "bin_width_s" => s.bin_width_s = as_f64(key, value)?,
            "qber_sample_fraction" => s.qber_sample_fraction = as_f64(key, value)?,
            "qber_window_s" => s.qber_window_s = as_f64(key, value)?,
            "clock.frequency_hz" => s.clock.frequency_hz = as_f64(key, value)?,
            "clock.amplitude_v" => s.clock.amplitude_v = as_f64(key, value)?,
            "clock.duty" => s.clock.duty = as_f64(key, value)?,
            "source.cw_power_dbm" => s.source.cw_power = PowerLevel::from_dbm(as_f64(key, value)?),
            "source.wavelength_nm" => s.source.wavelength_nm = as_f64(key, value)?,
            "channel.length_km" => s.channel.length_km = as_f64(key, value)?,
            "channel.alpha_db_per_km" => s.channel.alpha_db_per_km = as_f64(key, value)?,
            "channel.reference_length_km" => s.channel.reference_length_km = as_f64(key, value)?,
            "drift.t_stable_s" => s.channel.drift.t_stable_s = as_f64(key, value)?,
            "drift.sigma_rad_per_sqrt_s" => s.channel.drift.sigma_rad_per_sqrt_s = as_f64(key, value)?,
            "drift.theta_max" => s.channel.drift.theta_max = as_f64(key, value)?,
            // Overrides the other drift keys regardless of order.
            "drift.enabled" => {
                if !as_bool(key, value)? {
                    s.channel.drift = DriftSpec::disabled();
                }
            }
            "detector.signal_rate_h" => s.detector.signal_rate_h = as_f64(key, value)?,
            "detector.leak_rate_v" => s.detector.leak_rate_v = as_f64(key, value)?,
            "detector.dark_rate" => s.detector.dark_rate = as_f64(key, value)?,
            "modulator.extinction_db" => s.modulator.extinction_db = as_f64(key, value)?,
            "modulator.gate_open_fraction" => s.modulator.gate_open_fraction = as_f64(key, value)?,
            "thresholds.t_signal" => {
                let t = s
                    .thresholds
                    .get_or_insert(ClassifierThresholds { t_signal: 0, t_hv: 0 });
                t.t_signal = as_u64(key, value)?;
            }
            "thresholds.t_hv" => {
                let t = s
                    .thresholds
                    .get_or_insert(ClassifierThresholds { t_signal: 0, t_hv: 0 });
                t.t_hv = as_u64(key, value)?;
            }
            "timing.sample_offset_s" => s.sample_offset_s = Some(as_f64(key, value)?),
            "sweep.v_min" => p.sweep_v_min = as_f64(key, value)?,
            "sweep.v_max" => p.sweep_v_max = as_f64(key, value)?,
            "sweep.v_step" => p.sweep_v_step = as_f64(key, value)?,
            "sweep.v_offset" => p.sweep_v_offset = as_f64(key, value)?,
            "sweep.total_cps" => p.sweep_total_cps = as_f64(key, value)?,
            "pulse_train.peak_rate_cps" => p.pulse_train_peak_rate_cps = as_f64(key, value)?,
            "pulse_train.short_length_km" => p.pulse_train_short_length_km = as_f64(key, value)?,
            "cw.h_rate_cps" => p.cw_h_rate_cps = as_f64(key, value)?,
            "trace.duration_s" => p.trace_duration_s = as_f64(key, value)?,
            "pulsed.mcss_start_s" => p.pulsed_mcss_start_s = as_f64(key, value)?,
            "gating.span_s" => p.gating_span_s = as_f64(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Parses configuration text on top of the defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let mut flat = Vec::new();
        flatten("", &table, &mut flat);
        let mut cfg = ScenarioConfig::default();
        let mut thresholds_given = (false, false);
        // Apply `drift.enabled` last so it wins over the individual drift keys.
        flat.sort_by_key(|(k, _)| k == "drift.enabled");
        for (key, value) in &flat {
            cfg.set(key, value)?;
            match key.as_str() {
                "thresholds.t_signal" => thresholds_given.0 = true,
                "thresholds.t_hv" => thresholds_given.1 = true,
                _ => {}
            }
        }
        match thresholds_given {
            (true, false) => {
                return Err(invalid(
                    "thresholds.t_hv",
                    "must be set together with thresholds.t_signal",
                ))
            }
            (false, true) => {
                return Err(invalid(
                    "thresholds.t_signal",
                    "must be set together with thresholds.t_hv",
                ))
            }
            _ => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ScenarioConfig::from_toml_str(&text)
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn as_f64(key: &str, v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(ConfigError::Type {
            key: key.to_string(),
            expected: "a number",
        }),
    }
}

fn as_u64(key: &str, v: &Value) -> Result<u64, ConfigError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(ConfigError::Type {
            key: key.to_string(),
            expected: "a non-negative integer",
        }),
    }
}

fn as_bool(key: &str, v: &Value) -> Result<bool, ConfigError> {
    v.as_bool().ok_or_else(|| ConfigError::Type {
        key: key.to_string(),
        expected: "true or false",
    })
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str, ConfigError> {
    v.as_str().ok_or_else(|| ConfigError::Type {
        key: key.to_string(),
        expected: "a string",
    })
}
