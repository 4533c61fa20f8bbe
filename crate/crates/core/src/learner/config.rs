use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GhqError, Result};

/// Which learner to train.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmVariant {
    /// Ideal-object groups, per-group monotonic mixers, inter-group MI loss.
    #[default]
    Ghq,
    /// GHQ grouping and mixers without the MI loss.
    #[serde(rename = "ghq-nomi")]
    GhqNoMi,
    /// Independent per-agent Q-learning with one shared network.
    Iql,
    /// Additive mixing with one shared network.
    Vdn,
    /// One monotonic mixer over all agents, shared network, padded actions.
    Qmix,
}

impl AlgorithmVariant {
    pub const ALL: [AlgorithmVariant; 5] =
        [AlgorithmVariant::Ghq, AlgorithmVariant::GhqNoMi, AlgorithmVariant::Iql, AlgorithmVariant::Vdn, AlgorithmVariant::Qmix];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmVariant::Ghq => "ghq",
            AlgorithmVariant::GhqNoMi => "ghq-nomi",
            AlgorithmVariant::Iql => "iql",
            AlgorithmVariant::Vdn => "vdn",
            AlgorithmVariant::Qmix => "qmix",
        }
    }

    /// Whether agents are split into ideal-object groups.
    pub fn is_grouped(self) -> bool {
        matches!(self, AlgorithmVariant::Ghq | AlgorithmVariant::GhqNoMi)
    }

    pub fn uses_mi(self) -> bool {
        self == AlgorithmVariant::Ghq
    }
}

impl fmt::Display for AlgorithmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmVariant {
    type Err = GhqError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| GhqError::Config(format!("unknown algorithm '{s}' (expected ghq, ghq-nomi, iql, vdn or qmix)")))
    }
}

/// Training hyperparameters. [`Default`] gives the full-scale settings;
/// [`TrainConfig::desk`] the small-budget preset used for the desk maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: AlgorithmVariant,
    pub total_steps: u64,
    /// Overrides the map's episode cap when set.
    pub max_episode_steps: Option<usize>,
    pub lr: f64,
    pub lr_decay_factor: f64,
    /// Episodes between learning-rate decays.
    pub lr_decay_interval: u64,
    pub gamma: f64,
    /// Multiplies environment rewards before they enter the TD targets. With
    /// normalised rewards the default puts a perfect episode at 20.
    pub reward_scale: f64,
    pub epsilon_start: f64,
    pub epsilon_finish: f64,
    pub epsilon_anneal_steps: u64,
    /// Capacity in episodes.
    pub buffer_capacity: usize,
    /// Episodes per training batch.
    pub batch_size: usize,
    pub lambda_td: f64,
    pub lambda_mi: f64,
    /// Episodes between hard target-network copies.
    pub target_update_interval: u64,
    /// Environment steps between evaluations.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: AlgorithmVariant::Ghq,
            total_steps: 5_000_000,
            max_episode_steps: None,
            lr: 3e-4,
            lr_decay_factor: 0.5,
            lr_decay_interval: 50_000,
            gamma: 0.99,
            reward_scale: 20.0,
            epsilon_start: 1.0,
            epsilon_finish: 0.05,
            epsilon_anneal_steps: 50_000,
            buffer_capacity: 5000,
            batch_size: 32,
            lambda_td: 1.0,
            lambda_mi: 1.0,
            target_update_interval: 200,
            eval_interval: 10_000,
            eval_episodes: 32,
            grad_clip: 10.0,
        }
    }
}

impl TrainConfig {
    /// Small-budget preset for the desk maps.
    pub fn desk() -> Self {
        Self { total_steps: 300_000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("lr_decay_factor", self.lr_decay_factor),
            ("gamma", self.gamma),
            ("reward_scale", self.reward_scale),
            ("grad_clip", self.grad_clip),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GhqError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.gamma > 1.0 {
            return Err(GhqError::Config(format!("gamma must be at most 1, got {}", self.gamma)));
        }
        for (name, v) in [("lambda_td", self.lambda_td), ("lambda_mi", self.lambda_mi)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(GhqError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.epsilon_start) || !in_unit(self.epsilon_finish) || self.epsilon_finish > self.epsilon_start {
            return Err(GhqError::Config(format!(
                "epsilon schedule {} -> {} must decrease inside [0, 1]",
                self.epsilon_start, self.epsilon_finish
            )));
        }
        let counts = [
            ("total_steps", self.total_steps),
            ("lr_decay_interval", self.lr_decay_interval),
            ("target_update_interval", self.target_update_interval),
            ("eval_interval", self.eval_interval),
            ("buffer_capacity", self.buffer_capacity as u64),
            ("batch_size", self.batch_size as u64),
            ("eval_episodes", self.eval_episodes as u64),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(GhqError::Config(format!("{name} must be positive")));
            }
        }
        if self.batch_size > self.buffer_capacity {
            return Err(GhqError::Config("batch_size exceeds buffer_capacity".into()));
        }
        if self.max_episode_steps == Some(0) {
            return Err(GhqError::Config("max_episode_steps must be positive".into()));
        }
        Ok(())
    }

    /// Linear anneal from `epsilon_start` to `epsilon_finish`.
    pub fn epsilon_at(&self, env_step: u64) -> f64 {
        if self.epsilon_anneal_steps == 0 {
            return self.epsilon_finish;
        }
        let frac = (env_step as f64 / self.epsilon_anneal_steps as f64).min(1.0);
        self.epsilon_start - (self.epsilon_start - self.epsilon_finish) * frac
    }

    /// Learning rate after `episodes` completed episodes.
    pub fn lr_at(&self, episodes: u64) -> f64 {
        self.lr * self.lr_decay_factor.powi((episodes / self.lr_decay_interval) as i32)
    }
}
