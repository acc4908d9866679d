//! Goal-conditioned soft actor-critic over latent states.
//!
//! Policy input is `[z, g]`; critics see `[z, g, a]`. Actions live in
//! `[-1, 1]^k` through a tanh squash and are scaled by the environment.
//! The entropy temperature is fixed.

use std::fs;
use std::io;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Activation, AdamConfig, AdamState, DenseGrads, DenseNet, NnError};
use crate::replay::Batch;
use crate::scalar::{l2_distance, standard_normal_vec, Scalar};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub alpha: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            gamma: 0.99,
            tau: 0.005,
            alpha: 0.1,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            batch_size: 128,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hidden.iter().any(|&h| h == 0) {
            return Err("agent.hidden sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(format!("agent.gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(format!("agent.tau must lie in (0, 1], got {}", self.tau));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(format!("agent.alpha must be non-negative, got {}", self.alpha));
        }
        for (name, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(format!("agent.{name} must be positive, got {lr}"));
            }
        }
        if self.batch_size == 0 {
            return Err("agent.batch_size must be >= 1".into());
        }
        Ok(())
    }
}

/// `-‖z_next − goal‖₂`.
pub fn latent_reward<T: Scalar>(z_next: &[T], goal: &[T]) -> T {
    -l2_distance(z_next, goal)
}

/// `log(1 − tanh²u)` without cancellation for large `|u|`.
pub fn log_one_minus_tanh_sq<T: Scalar>(u: T) -> T {
    let two = T::c(2.0);
    let softplus = |x: T| {
        if x > T::zero() {
            x + (-x).exp().ln_1p()
        } else {
            x.exp().ln_1p()
        }
    };
    two * (T::c(std::f64::consts::LN_2) - u - softplus(-two * u))
}

/// Squashed Gaussian sample and its log-density, given the actor's raw output
/// `[mean, log_std]` and standard normal `noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample<T> {
    pub pre_tanh: Vec<T>,
    pub action: Vec<T>,
    pub std: Vec<T>,
    pub log_prob: T,
    /// Whether each raw log-std lies inside the clamp.
    pub log_std_active: Vec<bool>,
}

pub fn squashed_sample<T: Scalar>(raw: &[T], noise: &[T]) -> PolicySample<T> {
    let k = noise.len();
    debug_assert_eq!(raw.len(), 2 * k);
    let (lo, hi) = (T::c(LOG_STD_MIN), T::c(LOG_STD_MAX));
    let half_ln_2pi = T::c(0.5 * (2.0 * std::f64::consts::PI).ln());
    let mut out = PolicySample {
        pre_tanh: Vec::with_capacity(k),
        action: Vec::with_capacity(k),
        std: Vec::with_capacity(k),
        log_prob: T::zero(),
        log_std_active: Vec::with_capacity(k),
    };
    for i in 0..k {
        let raw_ls = raw[k + i];
        let ls = raw_ls.max(lo).min(hi);
        let std = ls.exp();
        let u = raw[i] + std * noise[i];
        out.log_prob += -T::c(0.5) * noise[i] * noise[i] - ls - half_ln_2pi - log_one_minus_tanh_sq(u);
        out.pre_tanh.push(u);
        out.action.push(u.tanh());
        out.std.push(std);
        out.log_std_active.push(raw_ls >= lo && raw_ls <= hi);
    }
    out
}

fn concat<T: Copy>(parts: &[&[T]]) -> Vec<T> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats<T> {
    pub critic_loss: T,
    pub actor_loss: T,
    pub mean_q: T,
    pub mean_reward: T,
}

/// Per-sample noise for one gradient step.
#[derive(Debug, Clone)]
pub struct StepNoise<T> {
    /// Drives next-state actions in the critic target.
    pub next: Vec<Vec<T>>,
    /// Drives current-state actions in the actor loss.
    pub current: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct SacAgent<T> {
    config: AgentConfig,
    latent_dim: usize,
    action_dim: usize,
    pub actor: DenseNet<T>,
    pub critics: [DenseNet<T>; 2],
    pub target_critics: [DenseNet<T>; 2],
    actor_opt: AdamState<T>,
    critic_opts: [AdamState<T>; 2],
    updates: u64,
}

const OUTPUT_INIT: f64 = 3e-3;

impl<T: Scalar> SacAgent<T> {
    pub fn new<R: Rng + ?Sized>(
        config: AgentConfig,
        latent_dim: usize,
        action_dim: usize,
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        config.validate().map_err(AgentError::Config)?;
        if latent_dim == 0 || action_dim == 0 {
            return Err(AgentError::Config("latent and action dims must be positive".into()));
        }
        let sizes = |input: usize, output: usize| {
            let mut s = vec![input];
            s.extend(&config.hidden);
            s.push(output);
            s
        };
        let actor_sizes = sizes(2 * latent_dim, 2 * action_dim);
        let mut actor = DenseNet::new(&actor_sizes, Activation::Relu, Activation::Identity, rng)?;
        // Small output layer so the initial policy is close to a standing,
        // unit-variance Gaussian before squashing.
        let last = actor_sizes.len() - 2;
        for row in 0..actor_sizes[last + 1] {
            for col in 0..actor_sizes[last] {
                actor.set_weight(last, row, col, T::c(rng.random_range(-OUTPUT_INIT..OUTPUT_INIT)));
            }
            actor.set_bias(last, row, T::c(rng.random_range(-OUTPUT_INIT..OUTPUT_INIT)));
        }
        let q_sizes = sizes(2 * latent_dim + action_dim, 1);
        let q1 = DenseNet::new(&q_sizes, Activation::Relu, Activation::Identity, rng)?;
        let q2 = DenseNet::new(&q_sizes, Activation::Relu, Activation::Identity, rng)?;
        Ok(Self::from_nets(config, latent_dim, action_dim, actor, [q1, q2]))
    }

    /// Targets start as copies of `critics`.
    pub fn from_nets(
        config: AgentConfig,
        latent_dim: usize,
        action_dim: usize,
        actor: DenseNet<T>,
        critics: [DenseNet<T>; 2],
    ) -> Self {
        let actor_opt = AdamState::new(&actor, AdamConfig::with_learning_rate(config.actor_lr));
        let critic_opts = [
            AdamState::new(&critics[0], AdamConfig::with_learning_rate(config.critic_lr)),
            AdamState::new(&critics[1], AdamConfig::with_learning_rate(config.critic_lr)),
        ];
        Self {
            target_critics: critics.clone(),
            config,
            latent_dim,
            action_dim,
            actor,
            critics,
            actor_opt,
            critic_opts,
            updates: 0,
        }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Gradient steps taken so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn check_latent(&self, v: &[T]) -> Result<(), AgentError> {
        if v.len() != self.latent_dim {
            return Err(AgentError::DimensionMismatch {
                expected: self.latent_dim,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Tanh of the policy mean when `deterministic`, a squashed Gaussian draw otherwise.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        z: &[T],
        goal: &[T],
        deterministic: bool,
        rng: &mut R,
    ) -> Result<Vec<T>, AgentError> {
        self.check_latent(z)?;
        self.check_latent(goal)?;
        let raw = self.actor.forward(&concat(&[z, goal]));
        if deterministic {
            return Ok(raw[..self.action_dim].iter().map(|m| m.tanh()).collect());
        }
        let noise = standard_normal_vec(rng, self.action_dim);
        Ok(squashed_sample(&raw, &noise).action)
    }

    fn q_min(critics: &[DenseNet<T>; 2], input: &[T]) -> (T, usize) {
        let a = critics[0].forward(input)[0];
        let b = critics[1].forward(input)[0];
        if b < a {
            (b, 1)
        } else {
            (a, 0)
        }
    }

    /// `r + γ·(min Q_target(s′, a′) − α·log π(a′|s′))` per transition.
    pub fn critic_targets(&self, batch: &Batch<T>, next_noise: &[Vec<T>]) -> (Vec<T>, Vec<T>) {
        let gamma = T::c(self.config.gamma);
        let alpha = T::c(self.config.alpha);
        let mut targets = Vec::with_capacity(batch.len());
        let mut rewards = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let (zn, g) = (&batch.next_latents[i], &batch.goals[i]);
            let r = batch.rewards[i];
            let raw = self.actor.forward(&concat(&[zn, g]));
            let s = squashed_sample(&raw, &next_noise[i]);
            let (q, _) = Self::q_min(&self.target_critics, &concat(&[zn, g, &s.action]));
            targets.push(r + gamma * (q - alpha * s.log_prob));
            rewards.push(r);
        }
        (targets, rewards)
    }

    /// Mean over both critics and the batch of `(Q − y)²`, with gradients.
    pub fn critic_loss_and_grads(&self, batch: &Batch<T>, targets: &[T]) -> (T, [DenseGrads<T>; 2], T) {
        let n = T::c(batch.len() as f64);
        let mut grads = [
            DenseGrads::zeros_like(&self.critics[0]),
            DenseGrads::zeros_like(&self.critics[1]),
        ];
        let mut loss = T::zero();
        let mut q_sum = T::zero();
        for i in 0..batch.len() {
            let input = concat(&[&batch.latents[i], &batch.goals[i], &batch.actions[i]]);
            for (k, critic) in self.critics.iter().enumerate() {
                let cache = critic.forward_cached(&input);
                let q = cache.output()[0];
                let err = q - targets[i];
                loss += err * err;
                q_sum += q;
                critic.accumulate_backward(&cache, &[err / n], Some(&mut grads[k]), false);
            }
        }
        let two_n = T::c(2.0) * n;
        (loss / two_n, grads, q_sum / two_n)
    }

    /// Per-sample actor loss `α·log π(a|s) − min Q(s, a)` and its gradient
    /// with respect to the actor's raw output, scaled by `weight`.
    pub fn actor_head_loss(&self, state: &[T], raw: &[T], noise: &[T], weight: T) -> (T, Vec<T>) {
        let k = self.action_dim;
        let alpha = T::c(self.config.alpha);
        let two = T::c(2.0);
        let s = squashed_sample(raw, noise);
        let q_input = concat(&[state, &s.action]);
        let (q, which) = Self::q_min(&self.critics, &q_input);
        let critic = &self.critics[which];
        let cache = critic.forward_cached(&q_input);
        let dq = critic
            .accumulate_backward(&cache, &[T::one()], None, true)
            .expect("input gradient");
        let dq_da = &dq[2 * self.latent_dim..];
        let mut upstream = vec![T::zero(); 2 * k];
        for i in 0..k {
            let t = s.action[i];
            let dl_du = alpha * two * t - dq_da[i] * (T::one() - t * t);
            upstream[i] = dl_du * weight;
            if s.log_std_active[i] {
                upstream[k + i] = (dl_du * s.std[i] * noise[i] - alpha) * weight;
            }
        }
        ((alpha * s.log_prob - q) * weight, upstream)
    }

    pub fn actor_loss_and_grads(&self, batch: &Batch<T>, noise: &[Vec<T>]) -> (T, DenseGrads<T>) {
        let weight = T::one() / T::c(batch.len() as f64);
        let mut grads = DenseGrads::zeros_like(&self.actor);
        let mut loss = T::zero();
        for i in 0..batch.len() {
            let state = concat(&[&batch.latents[i], &batch.goals[i]]);
            let cache = self.actor.forward_cached(&state);
            let (l, up) = self.actor_head_loss(&state, cache.output(), &noise[i], weight);
            loss += l;
            self.actor.accumulate_backward(&cache, &up, Some(&mut grads), false);
        }
        (loss, grads)
    }

    pub fn soft_target_update(&mut self) {
        let tau = T::c(self.config.tau);
        for k in 0..2 {
            self.target_critics[k].soft_update_from(&self.critics[k], tau);
        }
    }

    fn check_batch(&self, batch: &Batch<T>) -> Result<(), AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        if batch.rewards.len() != batch.len() {
            return Err(AgentError::DimensionMismatch {
                expected: batch.len(),
                got: batch.rewards.len(),
            });
        }
        for i in 0..batch.len() {
            self.check_latent(&batch.latents[i])?;
            self.check_latent(&batch.next_latents[i])?;
            self.check_latent(&batch.goals[i])?;
            if batch.actions[i].len() != self.action_dim {
                return Err(AgentError::DimensionMismatch {
                    expected: self.action_dim,
                    got: batch.actions[i].len(),
                });
            }
        }
        Ok(())
    }

    /// Critic step, actor step, target update.
    pub fn gradient_step_with_noise(&mut self, batch: &Batch<T>, noise: &StepNoise<T>) -> Result<UpdateStats<T>, AgentError> {
        self.check_batch(batch)?;
        let (targets, rewards) = self.critic_targets(batch, &noise.next);
        let (critic_loss, cgrads, mean_q) = self.critic_loss_and_grads(batch, &targets);
        let [g0, g1] = cgrads;
        self.critic_opts[0].step(&mut self.critics[0], &g0);
        self.critic_opts[1].step(&mut self.critics[1], &g1);
        let (actor_loss, agrads) = self.actor_loss_and_grads(batch, &noise.current);
        self.actor_opt.step(&mut self.actor, &agrads);
        self.soft_target_update();
        self.updates += 1;
        let mean_reward = rewards.iter().copied().sum::<T>() / T::c(rewards.len() as f64);
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            mean_q,
            mean_reward,
        })
    }

    pub fn gradient_step<R: Rng + ?Sized>(&mut self, batch: &Batch<T>, rng: &mut R) -> Result<UpdateStats<T>, AgentError> {
        let draw = |rng: &mut R| (0..batch.len()).map(|_| standard_normal_vec(rng, self.action_dim)).collect();
        let next = draw(rng);
        let current = draw(rng);
        self.gradient_step_with_noise(batch, &StepNoise { next, current })
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critics.iter().chain(&self.target_critics).all(DenseNet::is_finite)
    }

    /// Networks as NNC files plus a JSON config; optimizer state is not kept.
    pub fn save(&self, dir: &Path) -> Result<(), AgentError> {
        fs::create_dir_all(dir)?;
        self.actor.save(&dir.join("actor.nnc"))?;
        for k in 0..2 {
            self.critics[k].save(&dir.join(format!("q{}.nnc", k + 1)))?;
            self.target_critics[k].save(&dir.join(format!("q{}_target.nnc", k + 1)))?;
        }
        let meta = AgentMeta {
            config: self.config.clone(),
            latent_dim: self.latent_dim,
            action_dim: self.action_dim,
            updates: self.updates,
        };
        fs::write(
            dir.join("agent.json"),
            serde_json::to_string(&meta).expect("serializable") + "\n",
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, AgentError> {
        let meta: AgentMeta = serde_json::from_str(&fs::read_to_string(dir.join("agent.json"))?)
            .map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        let load = |name: &str| DenseNet::load(&dir.join(name), Activation::Relu, Activation::Identity);
        let actor = load("actor.nnc")?;
        let critics = [load("q1.nnc")?, load("q2.nnc")?];
        let targets = [load("q1_target.nnc")?, load("q2_target.nnc")?];
        if actor.input_dim() != 2 * meta.latent_dim || actor.output_dim() != 2 * meta.action_dim {
            return Err(AgentError::Checkpoint("actor shape disagrees with metadata".into()));
        }
        let mut agent = Self::from_nets(meta.config, meta.latent_dim, meta.action_dim, actor, critics);
        agent.target_critics = targets;
        agent.updates = meta.updates;
        Ok(agent)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentMeta {
    config: AgentConfig,
    latent_dim: usize,
    action_dim: usize,
    updates: u64,
}
