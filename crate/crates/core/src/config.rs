//! Single TOML document holding every tunable of the workbench.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::SimConfig;
use crate::closed_loop::{LoopConfig, TrainingConfig};
use crate::controller::{ActionBox, PpoConfig, RewardConfig, SafetyBounds};
use crate::error::{Error, Result};
use crate::rates::{Bb84Params, CowParams, E91Params, FiniteKeyParams, LinkParams, ProtocolConfig, ProtocolKind};
use crate::tcn::TcnConfig;

/// Protocol parameters shared across runs. Sifting factors follow from the
/// protocol kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateSettings {
    pub f_ec: f64,
    pub bb84: Bb84Params,
    pub e91: E91Params,
    pub cow: CowParams,
    pub finite_key: FiniteKeyParams,
}

impl Default for RateSettings {
    fn default() -> Self {
        let p = ProtocolConfig::bb84();
        Self { f_ec: p.f_ec, bb84: p.bb84, e91: p.e91, cow: p.cow, finite_key: p.finite_key }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObsSettings {
    pub theta_scale: f64,
    pub phi_scale: f64,
}

impl Default for ObsSettings {
    fn default() -> Self {
        Self { theta_scale: 0.1, phi_scale: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkbenchConfig {
    pub protocol: ProtocolKind,
    pub link: LinkParams,
    pub rates: RateSettings,
    pub sim: SimConfig,
    pub tcn: TcnConfig,
    pub ppo: PpoConfig,
    pub reward: RewardConfig,
    pub safety: SafetyBounds,
    pub action: ActionBox,
    pub observation: ObsSettings,
    #[serde(rename = "loop")]
    pub closed_loop: LoopConfig,
    pub training: TrainingConfig,
}

impl Default for WorkbenchConfig {
    fn default() -> Self {
        Self {
            protocol: ProtocolKind::Bb84Decoy,
            link: LinkParams::default(),
            rates: RateSettings::default(),
            sim: SimConfig::default(),
            tcn: TcnConfig::default(),
            ppo: PpoConfig::default(),
            reward: RewardConfig::default(),
            safety: SafetyBounds::default(),
            action: ActionBox::default(),
            observation: ObsSettings::default(),
            closed_loop: LoopConfig::default(),
            training: TrainingConfig::default(),
        }
    }
}

impl WorkbenchConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        self.protocol_config().validate()?;
        self.tcn.validate()?;
        self.ppo.validate()?;
        self.closed_loop.validate()?;
        if self.sim.n_pulses == 0 {
            return Err(Error::Config("sim.n_pulses must be positive".into()));
        }
        let r = &self.reward;
        if !(r.w_rate > 0.0 && r.w_err > 0.0 && r.qber_ref > 0.0 && r.skr_ref >= 0.0) {
            return Err(Error::Config("reward weights and qber_ref must be positive, skr_ref non-negative".into()));
        }
        Ok(())
    }

    /// Live protocol configuration for `self.protocol`.
    pub fn protocol_config(&self) -> ProtocolConfig {
        self.protocol_config_for(self.protocol)
    }

    pub fn protocol_config_for(&self, kind: ProtocolKind) -> ProtocolConfig {
        let base = ProtocolConfig::new(kind);
        let r = &self.rates;
        ProtocolConfig { f_ec: r.f_ec, bb84: r.bb84, e91: r.e91, cow: r.cow, finite_key: r.finite_key, ..base }
    }

    /// Apply a `section.key=value` override. The key must already exist and
    /// the value is read as a TOML literal, falling back to a plain string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
        let path = path.trim();
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut slot = &mut root;
        for key in path.split('.') {
            slot = slot
                .as_table_mut()
                .and_then(|t| t.get_mut(key))
                .ok_or_else(|| Error::Config(format!("unknown configuration key '{path}'")))?;
        }
        let mut value = parse_literal(raw.trim());
        if let (toml::Value::Float(_), toml::Value::Integer(i)) = (&*slot, &value) {
            value = toml::Value::Float(*i as f64);
        }
        *slot = value;
        let cfg: Self = root.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{path}: {e}")))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
