//! On-policy actor-critic training with the clipped surrogate objective.

mod advantages;
mod buffer;
mod train;
mod update;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::GpError;
use crate::mission::{MissionConfig, MissionError};
use crate::nnpolicy::{NetConfig, PolicyError};
use crate::world::{GenMode, WorldError, WorldGenConfig};

pub use advantages::{gae, normalize};
pub use buffer::{collect_rollouts, run_training_episode, EpisodeStats, RolloutBuffer, RolloutStep};
pub use train::{train, Checkpoint, TrainLogRow, TrainSummary, ADAM_FILE, LOG_FILE, PARAMS_FILE, SIDECAR_FILE};
pub use update::{clip_ratio, lr_at, ppo_update, surrogate, surrogate_grad, Adam, UpdateStats};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("loss or gradient became non-finite; update abandoned")]
    NonFiniteLoss,
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("training io: {0}")]
    Io(#[from] std::io::Error),
    #[error("training log: {0}")]
    Csv(#[from] csv::Error),
    #[error("checkpoint sidecar: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot resume: {0}")]
    Resume(String),
}

impl From<GpError> for PpoError {
    fn from(e: GpError) -> Self {
        PpoError::Mission(e.into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub n_envs: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Optimizer steps between learning-rate decays.
    pub lr_decay_every: u64,
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Each episode's budget is drawn uniformly from this range.
    pub budget_range: [f64; 2],
    pub total_interactions: usize,
    /// Iterations between checkpoints; the final state is always saved.
    pub checkpoint_every: usize,
    pub world_mode: GenMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_envs: 12,
            epochs: 8,
            batch: 64,
            lr: 1e-4,
            lr_decay: 0.96,
            lr_decay_every: 32,
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            value_coef: 0.5,
            entropy_coef: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            budget_range: [7.0, 9.0],
            total_interactions: 50_000,
            checkpoint_every: 10,
            world_mode: GenMode::Grid,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_envs == 0 || self.epochs == 0 || self.batch == 0 || self.lr_decay_every == 0 {
            return Err("n_envs, epochs, batch and lr_decay_every must be positive".into());
        }
        if !(self.clip >= 0.0 && self.clip < 1.0) {
            return Err(format!("clip {} must lie in [0, 1)", self.clip));
        }
        if !(self.lr > 0.0 && self.lr_decay > 0.0) {
            return Err("lr and lr_decay must be positive".into());
        }
        let [lo, hi] = self.budget_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(format!("budget_range [{lo}, {hi}] must be positive and ordered"));
        }
        if self.checkpoint_every == 0 {
            return Err("checkpoint_every must be positive".into());
        }
        Ok(())
    }
}

/// Everything a training run depends on; stored in the checkpoint sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSetup {
    pub seed: u64,
    pub world: WorldGenConfig,
    pub mission: MissionConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
}
