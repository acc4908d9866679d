//! Goal-conditioned reinforcement learning with imagined goals, where the
//! exploration, replay and update budgets are re-derived every epoch from
//! the VAE's negative β-ELBO.

pub mod agent;
pub mod autotune;
pub mod config;
pub mod diversity;
pub mod env;
pub mod image;
pub mod nn;
pub mod replay;
pub mod rig;
pub mod scalar;
pub mod search;
pub mod vae;

pub use autotune::{compute_settings, AutotuneSettings, Caps, TuningMode};
pub use config::{parse_config, ConfigError, ExperimentConfig};
pub use env::{NavEnv, NavEnvConfig, NavVariant};
pub use rig::{run, EpochMetrics, RigError, RunConfig, RunOutcome};
pub use scalar::Scalar;
pub use search::{random_search, run_baselines, SearchMode, SearchSpace, TrialResult};

pub type Vae = vae::VaeModel<f64>;
pub type Vae32 = vae::VaeModel<f32>;
pub type Agent = agent::SacAgent<f64>;
pub type Agent32 = agent::SacAgent<f32>;
pub type Net = nn::DenseNet<f64>;
pub type Net32 = nn::DenseNet<f32>;
pub type Buffer = replay::EpisodeBuffer<f64>;
pub type Buffer32 = replay::EpisodeBuffer<f32>;
pub type Rig = rig::RigRun<f64>;
pub type Rig32 = rig::RigRun<f32>;
