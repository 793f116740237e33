//! Run configuration: one TOML document covering every module, with dotted
//! `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mission::MissionConfig;
use crate::nnpolicy::NetConfig;
use crate::planners::EvalConfig;
use crate::ppo::{TrainConfig, TrainSetup};
use crate::world::{GenMode, WorldGenConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Base seed for training.
    pub seed: u64,
    /// Output directory for worlds, checkpoints and CSVs.
    pub out: PathBuf,
    /// Worker threads; 0 uses every available core.
    pub jobs: usize,
    /// Scene geometry; `mode` applies to generated evaluation worlds.
    pub world: WorldGenConfig,
    pub mission: MissionConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            jobs: 0,
            world: WorldGenConfig::default().with_mode(GenMode::Random),
            mission: MissionConfig::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

/// Applies `a.b.c=value` to a TOML table, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Parse(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Parse(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Parse(format!("override key {key:?}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

impl RunConfig {
    /// Parses a TOML document, applies overrides in order, and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.world.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.net.validate().map_err(ConfigError::Invalid)?;
        self.train.validate().map_err(ConfigError::Invalid)?;
        let m = &self.mission;
        if !m.gp.is_valid() {
            return bad("mission.gp: length_scale and signal_variance must be positive, the rest non-negative".into());
        }
        if m.gp_max_samples == 0 || m.graph.k == 0 || !(m.graph.neighbourhood > 0.0) {
            return bad("mission: gp_max_samples, graph.k and graph.neighbourhood must be positive".into());
        }
        if !(m.motion.obs_interval > 0.0 && m.motion.yaw_cost > 0.0 && m.motion.max_steps > 0) {
            return bad("mission.motion: obs_interval, yaw_cost and max_steps must be positive".into());
        }
        let s = &m.sensor;
        if !(s.range > 0.0 && s.fov_h_deg > 0.0 && s.fov_h_deg < 180.0 && s.fov_v_deg > 0.0 && s.fov_v_deg < 180.0) {
            return bad("mission.sensor: range must be positive and fields of view in (0, 180)".into());
        }
        if !(m.ucb_beta.is_finite() && m.mu_th.is_finite() && m.reward.alpha >= 0.0 && m.reward.delta >= 0.0) {
            return bad("mission: ucb_beta and mu_th must be finite, reward weights non-negative".into());
        }
        if !(self.eval.budget > 0.0) {
            return bad("eval.budget must be positive".into());
        }
        Ok(())
    }

    pub fn train_setup(&self) -> TrainSetup {
        TrainSetup {
            seed: self.seed,
            world: self.world.clone(),
            mission: self.mission.clone(),
            net: self.net,
            train: self.train.clone(),
        }
    }

    /// Generation settings for evaluation worlds.
    pub fn eval_world_config(&self) -> WorldGenConfig {
        self.world.clone()
    }
}
