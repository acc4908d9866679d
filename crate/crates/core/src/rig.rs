//! The training loop: VAE pretraining, then per epoch exploration, policy
//! updates, evaluation, VAE fine-tuning and ELBO evaluation, with the three
//! budget hyperparameters re-derived from the previous epoch's ELBO.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentConfig, AgentError, SacAgent};
use crate::autotune::{resolve, AutotuneError, AutotuneSettings, Caps, TuningMode};
use crate::env::{
    image_distance, render, reset_state, sample_eval_goal, Curriculum, EnvError, NavEnv, NavEnvConfig,
};
use crate::image::Image;
use crate::nn::AdamConfig;
use crate::replay::{Episode, EpisodeBuffer, RelabelFractions, ReplayError};
use crate::scalar::{derive_seed, standard_normal_vec, Scalar};
use crate::vae::{ElboReport, VaeConfig, VaeError, VaeModel, VaeOptimizer};

pub const COVERAGE_GRID: usize = 20;
pub const METRICS_HEADER: &str = "epoch,neg_beta_elbo,kl_term,recon_nll,n_e,n_b,n_theta,buffer_transitions,eval_dist_mean,eval_dist_std,coverage,cum_env_steps,cum_grad_updates,wall_clock_s";

const STREAM_PRETRAIN: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_EVAL: u64 = 4;

#[derive(Debug, Error)]
pub enum RigError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Autotune(#[from] AutotuneError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RigError + '_ {
    move |source| RigError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub curriculum: Curriculum,
    pub mode: TuningMode,
    pub epochs: usize,
    pub vae: VaeConfig,
    pub agent: AgentConfig,
    pub relabel: RelabelFractions,
    pub caps: Option<Caps>,
    /// Random-action rollouts collected for VAE pretraining.
    pub pretrain_rollouts: usize,
    pub pretrain_steps: usize,
    pub vae_finetune_steps: usize,
    /// Fine-tune every this many epochs.
    pub vae_finetune_interval: usize,
    /// Buffer observations used for the end-of-epoch ELBO.
    pub elbo_eval_batch: usize,
    pub eval_goals: usize,
    pub seed: u64,
    /// Checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_interval: usize,
    /// When false the `wall_clock_s` column is written as 0.
    pub record_wall_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            curriculum: Curriculum::constant(NavEnvConfig::default()).expect("default env is valid"),
            mode: TuningMode::Auto { xi: 1.0 },
            epochs: 40,
            vae: VaeConfig::default(),
            agent: AgentConfig::default(),
            relabel: RelabelFractions::default(),
            caps: Some(Caps::default()),
            pretrain_rollouts: 60,
            pretrain_steps: 2500,
            vae_finetune_steps: 250,
            vae_finetune_interval: 1,
            elbo_eval_batch: 256,
            eval_goals: 30,
            seed: 0,
            checkpoint_interval: 0,
            record_wall_clock: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RigError> {
        let bad = |m: String| Err(RigError::Config(m));
        if self.epochs == 0 {
            return bad("run.epochs must be >= 1".into());
        }
        if self.pretrain_rollouts == 0 {
            return bad("run.pretrain_rollouts must be >= 1".into());
        }
        if self.pretrain_steps == 0 {
            return bad("run.pretrain_steps must be >= 1".into());
        }
        if self.vae_finetune_interval == 0 {
            return bad("run.vae_finetune_interval must be >= 1".into());
        }
        if self.elbo_eval_batch == 0 {
            return bad("run.elbo_eval_batch must be >= 1".into());
        }
        if self.eval_goals == 0 {
            return bad("run.eval_goals must be >= 1".into());
        }
        self.vae.validate().map_err(|e| RigError::Config(format!("vae: {e}")))?;
        self.agent.validate().map_err(RigError::Config)?;
        self.relabel.validate()?;
        self.mode.validate()?;
        let l = self.curriculum.stages()[0].1.max_path_length;
        let shape = self.curriculum.stages()[0].1.image_shape();
        for (_, c) in self.curriculum.stages() {
            if c.max_path_length != l || c.image_shape() != shape {
                return bad("curriculum stages must share image shape and max path length".into());
            }
        }
        Ok(())
    }

    pub fn max_path_length(&self) -> usize {
        self.curriculum.stages()[0].1.max_path_length
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub neg_beta_elbo: f64,
    pub kl_term: f64,
    pub recon_nll: f64,
    pub n_e: usize,
    pub n_b: usize,
    pub n_theta: usize,
    pub buffer_transitions: usize,
    pub eval_dist_mean: f64,
    pub eval_dist_std: f64,
    pub coverage: f64,
    pub cum_env_steps: u64,
    pub cum_grad_updates: u64,
    pub wall_clock_s: f64,
    #[serde(skip)]
    pub trajectories: Vec<Vec<[f64; 2]>>,
}

/// Fraction of the cells of a 20×20 grid over the workspace visited by any point.
pub fn coverage_area(trajectories: &[Vec<[f64; 2]>], workspace: (f64, f64)) -> f64 {
    let (lo, hi) = workspace;
    let span = hi - lo;
    let cell = |v: f64| (((v - lo) / span * COVERAGE_GRID as f64).floor().max(0.0) as usize).min(COVERAGE_GRID - 1);
    let mut seen = [[false; COVERAGE_GRID]; COVERAGE_GRID];
    for p in trajectories.iter().flatten() {
        seen[cell(p[0])][cell(p[1])] = true;
    }
    let visited = seen.iter().flatten().filter(|&&v| v).count();
    visited as f64 / (COVERAGE_GRID * COVERAGE_GRID) as f64
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn scaled_action<T: Scalar>(action: &[T], scale: f64) -> [f64; 2] {
    [action[0].as_f64() * scale, action[1].as_f64() * scale]
}

/// Fits a fresh VAE on uniform-random-action rollouts in the first stage's
/// environment. Returns the model, its optimizer, the report on the
/// pretraining data and the number of environment steps taken.
pub fn pretrain_vae<T: Scalar, R: Rng + ?Sized>(
    config: &RunConfig,
    rng: &mut R,
) -> Result<(VaeModel<T>, VaeOptimizer<T>, ElboReport<T>, u64), RigError> {
    if config.pretrain_rollouts == 0 {
        return Err(RigError::Config("run.pretrain_rollouts must be >= 1".into()));
    }
    let env_cfg = *config.curriculum.at(0);
    let mut env = NavEnv::new(env_cfg)?;
    let mut data: Vec<Vec<T>> = Vec::new();
    for _ in 0..config.pretrain_rollouts {
        data.push(env.reset::<T, _>(rng).into_pixels());
        for _ in 0..env_cfg.max_path_length {
            let a = [
                rng.random_range(-1.0..=1.0) * env_cfg.action_scale,
                rng.random_range(-1.0..=1.0) * env_cfg.action_scale,
            ];
            data.push(env.step::<T>(a).into_pixels());
        }
    }
    let mut vae = VaeModel::new(&config.vae, env_cfg.image_shape(), rng)?;
    let mut opt = VaeOptimizer::new(&vae, AdamConfig::with_learning_rate(config.vae.learning_rate));
    let slices: Vec<&[T]> = data.iter().map(Vec::as_slice).collect();
    vae.fit(&slices, config.pretrain_steps, config.vae.batch_size, &mut opt, rng)?;
    let eval: Vec<&[T]> = (0..config.elbo_eval_batch)
        .map(|_| slices[rng.random_range(0..slices.len())])
        .collect();
    let report = vae.evaluate_elbo(&eval, config.vae.eval_mc_samples, rng)?;
    Ok((vae, opt, report, env.steps_taken()))
}

/// All mutable state of one run.
pub struct RigRun<T> {
    config: RunConfig,
    vae: VaeModel<T>,
    vae_opt: VaeOptimizer<T>,
    agent: SacAgent<T>,
    buffer: EpisodeBuffer<T>,
    env: NavEnv,
    rng: ChaCha8Rng,
    last_report: ElboReport<T>,
    pretrain_report: ElboReport<T>,
    cum_env_steps: u64,
    cum_grad_updates: u64,
    next_epoch: usize,
}

impl<T: Scalar> RigRun<T> {
    pub fn new(config: RunConfig) -> Result<Self, RigError> {
        config.validate()?;
        let mut pre_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_PRETRAIN]));
        let (vae, vae_opt, report, pretrain_steps) = pretrain_vae(&config, &mut pre_rng)?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_INIT]));
        let agent = SacAgent::new(config.agent.clone(), config.vae.latent_dim, 2, &mut init_rng)?;
        let env = NavEnv::new(*config.curriculum.at(0))?;
        let l = config.max_path_length();
        Ok(Self {
            buffer: EpisodeBuffer::new(l)?,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_TRAIN])),
            config,
            vae,
            vae_opt,
            agent,
            env,
            last_report: report,
            pretrain_report: report,
            cum_env_steps: pretrain_steps,
            cum_grad_updates: 0,
            next_epoch: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn vae(&self) -> &VaeModel<T> {
        &self.vae
    }

    pub fn agent(&self) -> &SacAgent<T> {
        &self.agent
    }

    pub fn buffer(&self) -> &EpisodeBuffer<T> {
        &self.buffer
    }

    pub fn pretrain_report(&self) -> &ElboReport<T> {
        &self.pretrain_report
    }

    /// Report the next epoch's settings will be derived from.
    pub fn last_report(&self) -> &ElboReport<T> {
        &self.last_report
    }

    pub fn cum_env_steps(&self) -> u64 {
        self.cum_env_steps
    }

    /// Settings the next epoch will use.
    pub fn pending_settings(&self) -> Result<AutotuneSettings, RigError> {
        Ok(resolve(
            &self.config.mode,
            self.last_report.neg_beta_elbo.as_f64(),
            self.config.max_path_length(),
            self.config.caps,
        )?)
    }

    fn explore(&mut self, episodes: usize) -> Result<(), RigError> {
        let l = self.config.max_path_length();
        let scale = self.env.config().action_scale;
        let d = self.config.vae.latent_dim;
        for _ in 0..episodes {
            let goal: Vec<T> = standard_normal_vec(&mut self.rng, d);
            let first = self.env.reset::<T, _>(&mut self.rng).into_pixels();
            let mut latents = vec![self.vae.encode_mean(&first)?];
            let mut observations = vec![first];
            let mut actions = Vec::with_capacity(l);
            for _ in 0..l {
                let z = latents.last().expect("non-empty");
                let a = self.agent.select_action(z, &goal, false, &mut self.rng)?;
                let obs = self.env.step::<T>(scaled_action(&a, scale)).into_pixels();
                latents.push(self.vae.encode_mean(&obs)?);
                observations.push(obs);
                actions.push(a);
            }
            self.cum_env_steps += l as u64;
            self.buffer.push_episode(Episode {
                observations,
                latents,
                actions,
                goal_latent: goal,
            })?;
        }
        Ok(())
    }

    fn train_policy(&mut self, steps: usize) -> Result<(), RigError> {
        if self.buffer.is_empty() {
            return Ok(());
        }
        for _ in 0..steps {
            let batch = self
                .buffer
                .sample_batch(self.config.agent.batch_size, self.config.relabel, &mut self.rng)?;
            self.agent.gradient_step(&batch, &mut self.rng)?;
            self.cum_grad_updates += 1;
        }
        Ok(())
    }

    /// Deterministic-policy rollouts towards freshly rendered goal images.
    /// Returns final image distances and position trajectories.
    fn evaluate(&self, epoch: usize, env_cfg: &NavEnvConfig) -> Result<(Vec<f64>, Vec<Vec<[f64; 2]>>), RigError> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &[STREAM_EVAL, epoch as u64]));
        let mut distances = Vec::with_capacity(self.config.eval_goals);
        let mut trajectories = Vec::with_capacity(self.config.eval_goals);
        for _ in 0..self.config.eval_goals {
            let context = reset_state(env_cfg, &mut rng);
            let (goal_img, _) = sample_eval_goal::<T, _>(env_cfg, &context, &mut rng);
            let goal = self.vae.encode_mean(goal_img.pixels())?;
            let mut env = NavEnv::with_state(*env_cfg, context)?;
            let mut obs: Image<T> = render(env.state(), env_cfg);
            let mut path = vec![env.state().position];
            for _ in 0..env_cfg.max_path_length {
                let z = self.vae.encode_mean(obs.pixels())?;
                let a = self.agent.select_action(&z, &goal, true, &mut rng)?;
                obs = env.step(scaled_action(&a, env_cfg.action_scale));
                path.push(env.state().position);
            }
            distances.push(image_distance(&obs, &goal_img)?.as_f64());
            trajectories.push(path);
        }
        Ok((distances, trajectories))
    }

    fn finetune_vae(&mut self) -> Result<(), RigError> {
        if self.config.vae_finetune_steps == 0 || self.buffer.is_empty() {
            return Ok(());
        }
        let data = self.buffer.all_observations();
        self.vae.fit(
            &data,
            self.config.vae_finetune_steps,
            self.config.vae.batch_size,
            &mut self.vae_opt,
            &mut self.rng,
        )?;
        Ok(())
    }

    /// Executes the next epoch.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics, RigError> {
        let start = Instant::now();
        let epoch = self.next_epoch;
        let env_cfg = *self.config.curriculum.at(epoch);
        self.env.set_config(env_cfg)?;

        let settings = self.pending_settings()?;
        self.buffer.resize(settings.n_buffer)?;
        self.explore(settings.n_explore)?;
        self.train_policy(settings.n_grad)?;
        let (distances, trajectories) = self.evaluate(epoch, &env_cfg)?;

        if (epoch + 1) % self.config.vae_finetune_interval == 0 {
            self.finetune_vae()?;
            self.buffer.refresh_latents(&self.vae)?;
        }
        let eval_batch = self.buffer.sample_observations(self.config.elbo_eval_batch, &mut self.rng)?;
        let report = self
            .vae
            .evaluate_elbo(&eval_batch, self.config.vae.eval_mc_samples, &mut self.rng)?;
        self.last_report = report;

        let (eval_dist_mean, eval_dist_std) = mean_std(&distances);
        self.next_epoch += 1;
        Ok(EpochMetrics {
            epoch,
            neg_beta_elbo: report.neg_beta_elbo.as_f64(),
            kl_term: report.kl_term.as_f64(),
            recon_nll: report.recon_nll.as_f64(),
            n_e: settings.n_explore,
            n_b: settings.n_buffer,
            n_theta: settings.n_grad,
            buffer_transitions: self.buffer.len(),
            eval_dist_mean,
            eval_dist_std,
            coverage: coverage_area(&trajectories, env_cfg.workspace()),
            cum_env_steps: self.cum_env_steps,
            cum_grad_updates: self.cum_grad_updates,
            wall_clock_s: if self.config.record_wall_clock {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
            trajectories,
        })
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), RigError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        self.vae.save(dir, "vae")?;
        self.agent.save(&dir.join("agent"))?;
        Ok(())
    }
}

pub struct MetricsWriter {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, RigError> {
        let file = fs::File::create(path).map_err(io_err(path))?;
        let mut writer = csv::Writer::from_writer(file);
        writer
            .write_record(METRICS_HEADER.split(','))
            .map_err(|source| RigError::Csv {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn write(&mut self, m: &EpochMetrics) -> Result<(), RigError> {
        let row = [
            m.epoch.to_string(),
            m.neg_beta_elbo.to_string(),
            m.kl_term.to_string(),
            m.recon_nll.to_string(),
            m.n_e.to_string(),
            m.n_b.to_string(),
            m.n_theta.to_string(),
            m.buffer_transitions.to_string(),
            m.eval_dist_mean.to_string(),
            m.eval_dist_std.to_string(),
            m.coverage.to_string(),
            m.cum_env_steps.to_string(),
            m.cum_grad_updates.to_string(),
            m.wall_clock_s.to_string(),
        ];
        let path = &self.path;
        let csv_err = |source| RigError::Csv {
            path: path.clone(),
            source,
        };
        self.writer.write_record(&row).map_err(csv_err)?;
        self.writer.flush().map_err(io_err(path))
    }
}

pub fn write_coverage_csv(path: &Path, trajectories: &[Vec<[f64; 2]>]) -> Result<(), RigError> {
    let csv_err = |source| RigError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["traj_id", "step", "x", "y"]).map_err(csv_err)?;
    for (id, traj) in trajectories.iter().enumerate() {
        for (step, p) in traj.iter().enumerate() {
            w.write_record(&[id.to_string(), step.to_string(), p[0].to_string(), p[1].to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Result of a full run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub pretrain_report: ElboReport<f64>,
    pub agent_updates: u64,
    pub peak_buffer: usize,
}

/// Runs every epoch. With `out` set, writes `metrics.csv`, per-epoch
/// coverage trajectories and checkpoints there.
pub fn run<T: Scalar>(config: RunConfig, out: Option<&Path>) -> Result<RunOutcome, RigError> {
    let mut state = RigRun::<T>::new(config)?;
    let mut writer = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            Some(MetricsWriter::create(&dir.join("metrics.csv"))?)
        }
        None => None,
    };
    let epochs = state.config.epochs;
    let interval = state.config.checkpoint_interval;
    let mut metrics = Vec::with_capacity(epochs);
    let mut peak_buffer = 0;
    for _ in 0..epochs {
        let m = state.run_epoch()?;
        peak_buffer = peak_buffer.max(m.buffer_transitions);
        if let (Some(dir), Some(w)) = (out, writer.as_mut()) {
            w.write(&m)?;
            write_coverage_csv(&dir.join(format!("coverage_epoch{:03}.csv", m.epoch)), &m.trajectories)?;
            if interval > 0 && (m.epoch + 1) % interval == 0 {
                state.save_checkpoint(&dir.join("checkpoints").join(format!("epoch{:03}", m.epoch)))?;
            }
        }
        metrics.push(m);
    }
    if let Some(dir) = out {
        state.save_checkpoint(&dir.join("checkpoints").join("final"))?;
    }
    let p = state.pretrain_report;
    Ok(RunOutcome {
        metrics,
        pretrain_report: ElboReport::from_terms(
            state.vae.beta().as_f64(),
            p.kl_term.as_f64(),
            p.recon_nll.as_f64(),
            p.n_samples,
        ),
        agent_updates: state.agent.updates(),
        peak_buffer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(mode: TuningMode, epochs: usize) -> RunConfig {
        let env = NavEnvConfig {
            max_path_length: 10,
            ..NavEnvConfig::default()
        };
        RunConfig {
            curriculum: Curriculum::constant(env).unwrap(),
            mode,
            epochs,
            vae: VaeConfig {
                hidden: vec![8],
                ..VaeConfig::default()
            },
            agent: AgentConfig {
                hidden: vec![8, 8],
                batch_size: 8,
                ..AgentConfig::default()
            },
            caps: Some(Caps {
                n_explore: 4,
                n_buffer: 40,
            }),
            pretrain_rollouts: 2,
            pretrain_steps: 10,
            vae_finetune_steps: 3,
            elbo_eval_batch: 16,
            eval_goals: 3,
            seed: 5,
            ..RunConfig::default()
        }
    }

    #[test]
    fn coverage_closed_forms() {
        let ws = (0.0, 1.0);
        assert_eq!(coverage_area(&[vec![[0.5, 0.5]; 50]], ws), 1.0 / 400.0);
        let all: Vec<Vec<[f64; 2]>> = (0..20)
            .map(|i| (0..20).map(|j| [(i as f64 + 0.5) / 20.0, (j as f64 + 0.5) / 20.0]).collect())
            .collect();
        assert_eq!(coverage_area(&all, ws), 1.0);
        assert_eq!(coverage_area(&[vec![[1.0, 1.0], [0.0, 0.0]]], ws), 2.0 / 400.0);
        assert_eq!(coverage_area(&[], ws), 0.0);
        assert_eq!(coverage_area(&[vec![[0.3, 0.3]]], (0.25, 0.75)), 1.0 / 400.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = tiny(TuningMode::Auto { xi: 1.0 }, 1);
        c.epochs = 0;
        assert!(matches!(c.validate(), Err(RigError::Config(_))));
        let mut c = tiny(TuningMode::Auto { xi: 1.0 }, 1);
        c.mode = TuningMode::Auto { xi: -1.0 };
        assert!(c.validate().is_err());
        let mut c = tiny(TuningMode::Auto { xi: 1.0 }, 1);
        c.relabel.future = 0.9;
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_epoch_writes_one_row_and_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = run::<f64>(tiny(TuningMode::Auto { xi: 1.0 }, 1), Some(dir.path())).unwrap();
        assert_eq!(out.metrics.len(), 1);
        let text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines[1].split(',').count(), 14);
        let cov = fs::read_to_string(dir.path().join("coverage_epoch000.csv")).unwrap();
        assert_eq!(cov.lines().next(), Some("traj_id,step,x,y"));
        assert_eq!(cov.lines().count(), 1 + 3 * 11);
        assert!(dir.path().join("checkpoints/final/agent").is_dir());
    }

    #[test]
    fn identical_seeds_give_identical_csvs() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let c = tempfile::tempdir().unwrap();
        run::<f64>(tiny(TuningMode::Auto { xi: 1.0 }, 2), Some(a.path())).unwrap();
        run::<f64>(tiny(TuningMode::Auto { xi: 1.0 }, 2), Some(b.path())).unwrap();
        let mut other = tiny(TuningMode::Auto { xi: 1.0 }, 2);
        other.seed = 6;
        run::<f64>(other, Some(c.path())).unwrap();
        let read = |d: &tempfile::TempDir| fs::read(d.path().join("metrics.csv")).unwrap();
        assert_eq!(read(&a), read(&b));
        assert_ne!(read(&a), read(&c));
    }

    #[test]
    fn counters_match_independent_accounting() {
        let cfg = tiny(TuningMode::Auto { xi: 0.05 }, 3);
        let l = cfg.max_path_length() as u64;
        let mut expected_steps = cfg.pretrain_rollouts as u64 * l;
        let mut expected_updates = 0;
        let mut state = RigRun::<f64>::new(cfg).unwrap();
        assert_eq!(state.cum_env_steps(), expected_steps);
        for _ in 0..3 {
            let pending = state.pending_settings().unwrap();
            let m = state.run_epoch().unwrap();
            assert_eq!((m.n_e, m.n_b, m.n_theta), (pending.n_explore, pending.n_buffer, pending.n_grad));
            assert_eq!(m.n_theta, m.n_e);
            assert_eq!(m.n_b, m.n_e * l as usize);
            assert!(m.buffer_transitions <= m.n_b);
            expected_steps += m.n_e as u64 * l;
            expected_updates += m.n_theta as u64;
            assert_eq!(m.cum_env_steps, expected_steps);
            assert_eq!(m.cum_grad_updates, expected_updates);
            assert_eq!(state.agent().updates(), expected_updates);
        }
    }

    #[test]
    fn fixed_mode_settings_are_constant() {
        let mode = TuningMode::Fixed {
            n_explore: 2,
            n_buffer: 15,
            n_grad: 3,
        };
        let out = run::<f64>(tiny(mode, 3), None).unwrap();
        for m in &out.metrics {
            assert_eq!((m.n_e, m.n_b, m.n_theta), (2, 15, 3));
            assert!(m.buffer_transitions <= 15);
        }
        assert_eq!(out.agent_updates, 9);
    }

    #[test]
    fn eval_rollouts_leave_the_buffer_alone() {
        let mode = TuningMode::Fixed {
            n_explore: 1,
            n_buffer: 100,
            n_grad: 1,
        };
        let mut state = RigRun::<f64>::new(tiny(mode, 2)).unwrap();
        let m = state.run_epoch().unwrap();
        assert_eq!(m.buffer_transitions, 10);
        assert_eq!(state.buffer().num_episodes(), 1);
        assert_eq!(m.trajectories.len(), 3);
    }
}
