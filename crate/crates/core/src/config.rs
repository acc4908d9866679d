//! TOML experiment configuration.
//!
//! Sections: `[env]`, `[vae]`, `[agent]`, `[autotune]`, `[run]`, `[search]`
//! and `[diversity]`. Every key is optional; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentConfig;
use crate::autotune::{Caps, TuningMode};
use crate::diversity::DiversityConfig;
use crate::env::{Curriculum, NavEnvConfig, NavVariant};
use crate::replay::RelabelFractions;
use crate::rig::RunConfig;
use crate::search::SearchSpace;
use crate::vae::VaeConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{key}: {message}")]
    Schema { key: String, message: String },
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
}

fn schema(key: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Schema {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub epoch: usize,
    pub variant: NavVariant,
}

/// `[env]`: the base environment, plus an optional variant schedule. An
/// empty schedule keeps `variant` for the whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub variant: NavVariant,
    pub height: usize,
    pub width: usize,
    pub workspace_scale: f64,
    pub max_path_length: usize,
    pub wall_set_size: usize,
    pub action_scale: f64,
    pub schedule: Vec<StageSpec>,
}

impl Default for EnvSection {
    fn default() -> Self {
        let c = NavEnvConfig::default();
        Self {
            variant: c.variant,
            height: c.height,
            width: c.width,
            workspace_scale: c.workspace_scale,
            max_path_length: c.max_path_length,
            wall_set_size: c.wall_set_size,
            action_scale: c.action_scale,
            schedule: Vec::new(),
        }
    }
}

impl EnvSection {
    pub fn base(&self) -> NavEnvConfig {
        NavEnvConfig {
            variant: self.variant,
            height: self.height,
            width: self.width,
            workspace_scale: self.workspace_scale,
            max_path_length: self.max_path_length,
            wall_set_size: self.wall_set_size,
            action_scale: self.action_scale,
        }
    }

    pub fn curriculum(&self) -> Result<Curriculum, ConfigError> {
        let base = self.base();
        base.validate().map_err(|e| schema("env", e.to_string()))?;
        let result = if self.schedule.is_empty() {
            Curriculum::constant(base)
        } else {
            Curriculum::new(
                self.schedule
                    .iter()
                    .map(|s| (s.epoch, base.with_variant(s.variant)))
                    .collect(),
            )
        };
        result.map_err(|e| schema("env.schedule", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Auto,
    Fixed,
}

/// `[autotune]`: `xi` is used in auto mode, the three counts in fixed mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutotuneSection {
    pub mode: ModeName,
    pub xi: f64,
    pub n_explore: usize,
    pub n_buffer: usize,
    pub n_grad: usize,
    /// When false the auto-mode values are unbounded.
    pub capped: bool,
    pub cap_explore: usize,
    pub cap_buffer: usize,
}

impl Default for AutotuneSection {
    fn default() -> Self {
        let caps = Caps::default();
        Self {
            mode: ModeName::Auto,
            xi: 1.0,
            n_explore: 100,
            n_buffer: 5000,
            n_grad: 100,
            capped: true,
            cap_explore: caps.n_explore,
            cap_buffer: caps.n_buffer,
        }
    }
}

impl AutotuneSection {
    pub fn mode(&self) -> TuningMode {
        match self.mode {
            ModeName::Auto => TuningMode::Auto { xi: self.xi },
            ModeName::Fixed => TuningMode::Fixed {
                n_explore: self.n_explore,
                n_buffer: self.n_buffer,
                n_grad: self.n_grad,
            },
        }
    }

    pub fn caps(&self) -> Option<Caps> {
        self.capped.then_some(Caps {
            n_explore: self.cap_explore,
            n_buffer: self.cap_buffer,
        })
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return Err(schema("autotune.xi", format!("must be positive and finite, got {}", self.xi)));
        }
        for (key, v) in [
            ("autotune.n_explore", self.n_explore),
            ("autotune.n_buffer", self.n_buffer),
            ("autotune.n_grad", self.n_grad),
            ("autotune.cap_explore", self.cap_explore),
            ("autotune.cap_buffer", self.cap_buffer),
        ] {
            if v == 0 {
                return Err(schema(key, "must be >= 1"));
            }
        }
        Ok(())
    }
}

/// `[run]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub epochs: usize,
    pub seed: u64,
    pub pretrain_rollouts: usize,
    pub pretrain_steps: usize,
    pub vae_finetune_steps: usize,
    pub vae_finetune_interval: usize,
    pub elbo_eval_batch: usize,
    pub eval_goals: usize,
    pub checkpoint_interval: usize,
    pub record_wall_clock: bool,
    pub relabel_future: f64,
    pub relabel_prior: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        let r = RunConfig::default();
        Self {
            epochs: r.epochs,
            seed: r.seed,
            pretrain_rollouts: r.pretrain_rollouts,
            pretrain_steps: r.pretrain_steps,
            vae_finetune_steps: r.vae_finetune_steps,
            vae_finetune_interval: r.vae_finetune_interval,
            elbo_eval_batch: r.elbo_eval_batch,
            eval_goals: r.eval_goals,
            checkpoint_interval: r.checkpoint_interval,
            record_wall_clock: r.record_wall_clock,
            relabel_future: r.relabel.future,
            relabel_prior: r.relabel.prior,
        }
    }
}

/// The whole file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: EnvSection,
    pub vae: VaeConfig,
    pub agent: AgentConfig,
    pub autotune: AutotuneSection,
    pub run: RunSection,
    pub search: SearchSpace,
    pub diversity: DiversityConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| schema("<toml>", e.message()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            schema(if key == "." { "<root>".to_string() } else { key }, e.into_inner().message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env.curriculum()?;
        self.vae.validate().map_err(|m| schema("vae", m))?;
        self.agent.validate().map_err(|m| schema("agent", m))?;
        self.autotune.validate()?;
        self.search.validate()?;
        self.diversity.validate().map_err(|m| schema("diversity", m))?;
        self.run_config()?;
        Ok(())
    }

    /// The configured run with every section applied.
    pub fn run_config(&self) -> Result<RunConfig, ConfigError> {
        let r = &self.run;
        let cfg = RunConfig {
            curriculum: self.env.curriculum()?,
            mode: self.autotune.mode(),
            epochs: r.epochs,
            vae: self.vae.clone(),
            agent: self.agent.clone(),
            relabel: RelabelFractions {
                future: r.relabel_future,
                prior: r.relabel_prior,
            },
            caps: self.autotune.caps(),
            pretrain_rollouts: r.pretrain_rollouts,
            pretrain_steps: r.pretrain_steps,
            vae_finetune_steps: r.vae_finetune_steps,
            vae_finetune_interval: r.vae_finetune_interval,
            elbo_eval_batch: r.elbo_eval_batch,
            eval_goals: r.eval_goals,
            seed: r.seed,
            checkpoint_interval: r.checkpoint_interval,
            record_wall_clock: r.record_wall_clock,
        };
        cfg.validate().map_err(|e| schema("run", e.to_string()))?;
        Ok(cfg)
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentConfig::from_toml(&text)
}
