//! Random search over ξ (auto mode) or over the raw triple (fixed mode), and
//! the three limited baselines, with per-trial resource accounting.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autotune::TuningMode;
use crate::config::ConfigError;
use crate::rig::{run, RigError, RunConfig, RunOutcome};
use crate::scalar::derive_seed;

/// Epochs averaged into a trial's objective.
pub const OBJECTIVE_WINDOW: usize = 3;
pub const SUMMARY_HEADER: &str =
    "trial,mode,xi,n_e,n_b,n_theta,objective,cum_env_steps,cum_grad_updates,peak_buffer,wall_clock_s";

const STREAM_SAMPLE: u64 = 0x5E;
const STREAM_RUN: u64 = 0x7A;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("trial {trial}: {source}")]
    Trial { trial: usize, source: RigError },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("{path}: {source}")]
    Csv { path: std::path::PathBuf, source: csv::Error },
}

/// Inclusive sampling ranges. `n_buffer` is sampled log-uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpace {
    pub xi: [f64; 2],
    pub n_explore: [usize; 2],
    pub n_buffer: [usize; 2],
    pub n_grad: [usize; 2],
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            xi: [0.1, 2.0],
            n_explore: [5, 300],
            n_buffer: [250, 15_000],
            n_grad: [5, 300],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |key: &str, message: String| ConfigError::Schema {
            key: format!("search.{key}"),
            message,
        };
        let [lo, hi] = self.xi;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(err("xi", format!("need 0 < lo <= hi, got [{lo}, {hi}]")));
        }
        for (key, [lo, hi]) in [("n_explore", self.n_explore), ("n_buffer", self.n_buffer), ("n_grad", self.n_grad)] {
            if lo == 0 || lo > hi {
                return Err(err(key, format!("need 1 <= lo <= hi, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, kind: SearchMode, rng: &mut R) -> TuningMode {
        match kind {
            SearchMode::Auto => TuningMode::Auto {
                xi: rng.random_range(self.xi[0]..=self.xi[1]),
            },
            SearchMode::Fixed => {
                let n_explore = rng.random_range(self.n_explore[0]..=self.n_explore[1]);
                let (lo, hi) = ((self.n_buffer[0] as f64).ln(), (self.n_buffer[1] as f64).ln());
                let n_buffer = (rng.random_range(lo..=hi).exp().round() as usize).clamp(self.n_buffer[0], self.n_buffer[1]);
                let n_grad = rng.random_range(self.n_grad[0]..=self.n_grad[1]);
                TuningMode::Fixed {
                    n_explore,
                    n_buffer,
                    n_grad,
                }
            }
        }
    }

    /// Each starves one dimension at its lower bound and keeps the others
    /// at their upper bounds.
    pub fn baselines(&self) -> [(TrialKind, TuningMode); 3] {
        let fixed = |n_explore, n_buffer, n_grad| TuningMode::Fixed {
            n_explore,
            n_buffer,
            n_grad,
        };
        [
            (
                TrialKind::LimitedExplore,
                fixed(self.n_explore[0], self.n_buffer[1], self.n_grad[1]),
            ),
            (
                TrialKind::LimitedBuffer,
                fixed(self.n_explore[1], self.n_buffer[0], self.n_grad[1]),
            ),
            (
                TrialKind::LimitedUpdates,
                fixed(self.n_explore[1], self.n_buffer[1], self.n_grad[0]),
            ),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Auto,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialKind {
    Auto,
    Fixed,
    LimitedExplore,
    LimitedBuffer,
    LimitedUpdates,
}

impl fmt::Display for TrialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrialKind::Auto => "auto",
            TrialKind::Fixed => "fixed",
            TrialKind::LimitedExplore => "limited_explore",
            TrialKind::LimitedBuffer => "limited_buffer",
            TrialKind::LimitedUpdates => "limited_updates",
        })
    }
}

impl From<SearchMode> for TrialKind {
    fn from(m: SearchMode) -> Self {
        match m {
            SearchMode::Auto => TrialKind::Auto,
            SearchMode::Fixed => TrialKind::Fixed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub kind: TrialKind,
    pub mode: TuningMode,
    /// Mean eval image distance over the last `OBJECTIVE_WINDOW` epochs.
    pub objective: f64,
    pub cum_env_steps: u64,
    pub cum_grad_updates: u64,
    pub peak_buffer: usize,
    pub wall_clock_s: f64,
    pub outcome: RunOutcome,
}

impl TrialResult {
    /// The triple used in the last epoch.
    pub fn final_settings(&self) -> (usize, usize, usize) {
        let m = self.outcome.metrics.last().expect("runs have at least one epoch");
        (m.n_e, m.n_b, m.n_theta)
    }
}

pub fn objective(outcome: &RunOutcome) -> f64 {
    let m = &outcome.metrics;
    let window = &m[m.len().saturating_sub(OBJECTIVE_WINDOW)..];
    window.iter().map(|e| e.eval_dist_mean).sum::<f64>() / window.len() as f64
}

/// Run seed of trial `index`, shared by every harness so objectives are paired.
pub fn trial_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, &[STREAM_RUN, index as u64])
}

fn run_trial(
    base: &RunConfig,
    trial: usize,
    kind: TrialKind,
    mode: TuningMode,
    out: Option<&Path>,
) -> Result<TrialResult, SearchError> {
    let config = RunConfig {
        mode,
        seed: trial_seed(base.seed, trial),
        ..base.clone()
    };
    let record = config.record_wall_clock;
    let start = Instant::now();
    let dir = out.map(|d| d.join(format!("{kind}_{trial:03}")));
    let outcome = run::<f64>(config, dir.as_deref()).map_err(|source| SearchError::Trial { trial, source })?;
    let last = outcome.metrics.last().expect("runs have at least one epoch");
    Ok(TrialResult {
        trial,
        kind,
        mode,
        objective: objective(&outcome),
        cum_env_steps: last.cum_env_steps,
        cum_grad_updates: last.cum_grad_updates,
        peak_buffer: outcome.peak_buffer,
        wall_clock_s: if record { start.elapsed().as_secs_f64() } else { 0.0 },
        outcome,
    })
}

fn run_all(
    jobs: Vec<(usize, TrialKind, TuningMode)>,
    base: &RunConfig,
    workers: usize,
    out: Option<&Path>,
) -> Result<Vec<TrialResult>, SearchError> {
    if workers == 0 {
        return Err(SearchError::Invalid("workers must be >= 1".into()));
    }
    base.validate().map_err(|source| SearchError::Trial { trial: 0, source })?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let results: Vec<Result<TrialResult, SearchError>> = pool.install(|| {
        jobs.into_par_iter()
            .map(|(trial, kind, mode)| run_trial(base, trial, kind, mode, out))
            .collect()
    });
    results.into_iter().collect()
}

/// Samples `n_trials` configurations from `space`, runs each for the full
/// `base` config on up to `workers` threads and returns them ranked by
/// objective, best first. Trial `i` samples from and runs with seeds derived
/// from `(base.seed, i)`, so results do not depend on `workers`.
pub fn random_search(
    space: &SearchSpace,
    mode: SearchMode,
    n_trials: usize,
    base: &RunConfig,
    workers: usize,
    out: Option<&Path>,
) -> Result<Vec<TrialResult>, SearchError> {
    if n_trials == 0 {
        return Err(SearchError::Invalid("n_trials must be >= 1".into()));
    }
    space.validate().map_err(|e| SearchError::Invalid(e.to_string()))?;
    let jobs = (0..n_trials)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base.seed, &[STREAM_SAMPLE, mode as u64, i as u64]));
            (i, mode.into(), space.sample(mode, &mut rng))
        })
        .collect();
    let mut results = run_all(jobs, base, workers, out)?;
    results.sort_by(|a, b| a.objective.total_cmp(&b.objective).then(a.trial.cmp(&b.trial)));
    Ok(results)
}

/// The three limited baselines, in the order explore, buffer, updates. All
/// use the run seed of trial 0.
pub fn run_baselines(
    space: &SearchSpace,
    base: &RunConfig,
    workers: usize,
    out: Option<&Path>,
) -> Result<Vec<TrialResult>, SearchError> {
    space.validate().map_err(|e| SearchError::Invalid(e.to_string()))?;
    let jobs = space.baselines().into_iter().map(|(kind, mode)| (0, kind, mode)).collect();
    run_all(jobs, base, workers, out)
}

pub fn write_summary_csv(path: &Path, results: &[TrialResult]) -> Result<(), SearchError> {
    let csv_err = |source| SearchError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(SUMMARY_HEADER.split(',')).map_err(csv_err)?;
    for r in results {
        let (n_e, n_b, n_theta) = r.final_settings();
        let xi = match r.mode {
            TuningMode::Auto { xi } => xi.to_string(),
            TuningMode::Fixed { .. } => String::new(),
        };
        w.write_record(&[
            r.trial.to_string(),
            r.kind.to_string(),
            xi,
            n_e.to_string(),
            n_b.to_string(),
            n_theta.to_string(),
            r.objective.to_string(),
            r.cum_env_steps.to_string(),
            r.cum_grad_updates.to_string(),
            r.peak_buffer.to_string(),
            r.wall_clock_s.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e.into()))
}
