//! Experiment configuration files.
//!
//! A configuration is a TOML document. Every section is optional except the
//! top-level `seed`; missing fields take the library defaults and unknown
//! keys are rejected with their line and column.

use std::path::PathBuf;

use mmfkey::adversary::{InterceptKind, InterceptModel};
use mmfkey::calibration::{CalibrationConfig, FocusMode, DEFAULT_CONTRAST_THRESHOLD};
use mmfkey::channel::{ChannelModel, FiberSpec};
use mmfkey::detection::{DecodeStrategy, DetectorArray};
use mmfkey::protocol::{EveConfig, Phase, SessionConfig, SignalModel, Source};
use mmfkey::security::{BudgetMethod, LinkParams, ReportParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub fiber: FiberSpec,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub detector: DetectorArray,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary: Option<AdversaryConfig>,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryConfig {
    pub kind: InterceptKind,
    #[serde(default = "full_tap")]
    pub tap_fraction: f64,
    #[serde(default = "communication_only")]
    pub active_in: Vec<Phase>,
}

fn full_tap() -> f64 {
    1.0
}

fn communication_only() -> Vec<Phase> {
    vec![Phase::Communication]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetKind {
    Bound,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub signal: SignalModel,
    pub source: Source,
    /// Mean photons per symbol pulse.
    pub mu2: f64,
    /// Shaping fidelity used by the analytic reports and figures.
    pub alpha2: f64,
    pub n_symbols_to_send: usize,
    pub decode: DecodeStrategy,
    pub sample_fraction: f64,
    pub qer_slack: f64,
    pub contrast_threshold: f64,
    pub symbol_rate_hz: f64,
    pub mc_samples: usize,
    pub secure_budget: BudgetKind,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let session = SessionConfig::default();
        Self {
            signal: SignalModel::Simulated {
                channel: ChannelModel::GaussianIid,
                focus: FocusMode::PhaseOnly,
                exact_masks: false,
            },
            source: session.source,
            mu2: session.mu2,
            alpha2: 0.7,
            n_symbols_to_send: session.n_symbols_to_send,
            decode: session.decode,
            sample_fraction: session.sample_fraction,
            qer_slack: session.qer_slack,
            contrast_threshold: DEFAULT_CONTRAST_THRESHOLD,
            symbol_rate_hz: 97e3,
            mc_samples: 100_000,
            secure_budget: BudgetKind::MonteCarlo,
        }
    }
}

/// One parameter, addressed as `section.field`, and the values it takes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub format: Format,
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let config: ExperimentConfig =
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(CliError::Config("sweep.values must not be empty".into()));
            }
            if let Some(bad) = sweep.values.iter().find(|v| !v.is_finite()) {
                return Err(CliError::Config(format!("sweep value {bad} is not finite")));
            }
            self.with_parameter(&sweep.parameter, sweep.values[0])?;
        }
        if self.protocol.mc_samples == 0 {
            return Err(CliError::Config("protocol.mc_samples must be >= 1".into()));
        }
        if self.protocol.symbol_rate_hz.is_nan() || self.protocol.symbol_rate_hz < 0.0 {
            return Err(CliError::Config(
                "protocol.symbol_rate_hz must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Copy of the configuration with one numeric field replaced.
    pub fn with_parameter(&self, path: &str, value: f64) -> Result<ExperimentConfig, CliError> {
        let mut doc = toml::Value::try_from(self).map_err(|e| CliError::Internal(e.to_string()))?;
        let mut slot = &mut doc;
        for key in path.split('.') {
            slot = slot.get_mut(key).ok_or_else(|| {
                CliError::Config(format!(
                    "sweep parameter `{path}` names no configuration field"
                ))
            })?;
        }
        *slot = match slot {
            toml::Value::Float(_) => toml::Value::Float(value),
            toml::Value::Integer(_) if value.fract() == 0.0 && value.abs() < 9.0e15 => {
                toml::Value::Integer(value as i64)
            }
            toml::Value::Integer(_) => {
                return Err(CliError::Config(format!(
                    "sweep parameter `{path}` needs integer values, got {value}"
                )))
            }
            _ => {
                return Err(CliError::Config(format!(
                    "sweep parameter `{path}` is not numeric"
                )))
            }
        };
        doc.try_into().map_err(|e: toml::de::Error| {
            CliError::Config(format!("sweep value {value} for `{path}`: {e}"))
        })
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn parameter_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("configuration serializes");
        Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn session_config(&self) -> Result<SessionConfig, CliError> {
        let p = &self.protocol;
        let eve = self
            .adversary
            .as_ref()
            .map(|a| -> Result<EveConfig, CliError> {
                Ok(EveConfig {
                    model: InterceptModel::new(a.kind, a.tap_fraction)?,
                    active_in: a.active_in.clone(),
                })
            })
            .transpose()?;
        let config = SessionConfig {
            fiber: self.fiber.clone(),
            calibration: self.calibration.clone(),
            detector: self.detector.clone(),
            signal: p.signal,
            source: p.source,
            mu2: p.mu2,
            n_symbols_to_send: p.n_symbols_to_send,
            eve,
            decode: p.decode,
            sample_fraction: p.sample_fraction,
            qer_slack: p.qer_slack,
            contrast_threshold: p.contrast_threshold,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn link_params(&self) -> LinkParams {
        LinkParams {
            alpha2: self.protocol.alpha2,
            mu2: self.protocol.mu2,
            n_modes: self.fiber.n_modes,
            n_symbols: self.detector.n_symbols,
            efficiency: self.detector.efficiency,
            p_dark: self.detector.dark_prob,
            attenuation: self.fiber.attenuation,
            length: self.fiber.length,
        }
    }

    pub fn budget_method(&self) -> BudgetMethod {
        match self.protocol.secure_budget {
            BudgetKind::Bound => BudgetMethod::Bound,
            BudgetKind::MonteCarlo => BudgetMethod::MonteCarlo {
                samples: self.protocol.mc_samples,
                seed: self.seed,
            },
        }
    }

    pub fn report_params(&self) -> ReportParams {
        ReportParams {
            link: self.link_params(),
            symbol_rate_hz: self.protocol.symbol_rate_hz,
            mc_samples: self.protocol.mc_samples,
            seed: self.seed,
            budget: self.budget_method(),
        }
    }
}
