use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use rigtune::config::{parse_config, ExperimentConfig, ModeName};
use rigtune::diversity::{run_diversity_experiment, write_diversity_csv};
use rigtune::search::{random_search, run_baselines, write_summary_csv, SearchMode};

#[derive(Parser)]
#[command(name = "rigtune", version, about = "Imagined-goal RL with ELBO-driven budget tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Auto,
    Fixed,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write metrics, coverage logs and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, conflicts_with_all = ["ne", "nb", "ntheta"])]
        xi: Option<f64>,
        #[arg(long)]
        ne: Option<usize>,
        #[arg(long)]
        nb: Option<usize>,
        #[arg(long)]
        ntheta: Option<usize>,
    },
    /// Fit VAEs through the glyph diversity schedule.
    Diversity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random search over xi (auto) or over the raw triple (fixed).
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trials: usize,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// The three limited baselines.
    Baselines {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Errors that should exit with status 2.
#[derive(Debug)]
struct ConfigFailure(String);

impl std::fmt::Display for ConfigFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigFailure {}

fn load(path: &Path) -> anyhow::Result<ExperimentConfig> {
    parse_config(path).map_err(|e| ConfigFailure(e.to_string()).into())
}

fn checked(cfg: ExperimentConfig) -> anyhow::Result<ExperimentConfig> {
    cfg.validate().map_err(|e| ConfigFailure(e.to_string()))?;
    Ok(cfg)
}

fn prepare_out(out: &Path, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let text = cfg.to_toml().context("serializing the resolved config")?;
    fs::write(out.join("config.toml"), text).with_context(|| format!("writing {}/config.toml", out.display()))
}

fn train(
    config: &Path,
    seed: Option<u64>,
    out: &Path,
    mode: Option<ModeArg>,
    xi: Option<f64>,
    triple: [Option<usize>; 3],
) -> anyhow::Result<()> {
    let mut cfg = load(config)?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    let fixed_flags = triple.iter().any(Option::is_some);
    let mode = match mode {
        Some(m) => m,
        None if fixed_flags => ModeArg::Fixed,
        None if xi.is_some() => ModeArg::Auto,
        None => match cfg.autotune.mode {
            ModeName::Auto => ModeArg::Auto,
            ModeName::Fixed => ModeArg::Fixed,
        },
    };
    match mode {
        ModeArg::Auto => {
            if fixed_flags {
                return Err(ConfigFailure("--ne/--nb/--ntheta need --mode fixed".into()).into());
            }
            cfg.autotune.mode = ModeName::Auto;
            if let Some(x) = xi {
                cfg.autotune.xi = x;
            }
        }
        ModeArg::Fixed => {
            if xi.is_some() {
                return Err(ConfigFailure("--xi needs --mode auto".into()).into());
            }
            cfg.autotune.mode = ModeName::Fixed;
            let [ne, nb, nt] = triple;
            cfg.autotune.n_explore = ne.unwrap_or(cfg.autotune.n_explore);
            cfg.autotune.n_buffer = nb.unwrap_or(cfg.autotune.n_buffer);
            cfg.autotune.n_grad = nt.unwrap_or(cfg.autotune.n_grad);
        }
    }
    let cfg = checked(cfg)?;
    let run_cfg = cfg.run_config().map_err(|e| ConfigFailure(e.to_string()))?;
    prepare_out(out, &cfg)?;
    let outcome = rigtune::run::<f64>(run_cfg, Some(out))?;
    if let Some(last) = outcome.metrics.last() {
        println!(
            "epochs={} eval_dist_mean={:.4} coverage={:.4} cum_env_steps={} cum_grad_updates={}",
            outcome.metrics.len(),
            last.eval_dist_mean,
            last.coverage,
            last.cum_env_steps,
            last.cum_grad_updates
        );
    }
    Ok(())
}

fn diversity(config: &Path, out: &Path) -> anyhow::Result<()> {
    let cfg = load(config)?;
    let schedule = cfg
        .diversity
        .schedule()
        .map_err(|e| ConfigFailure(format!("diversity: {e}")))?;
    prepare_out(out, &cfg)?;
    let rows = run_diversity_experiment::<f64>(&schedule, &cfg.vae, &cfg.diversity, &cfg.diversity.seeds)?;
    write_diversity_csv(&out.join("diversity.csv"), &rows)?;
    println!("stages={} seeds={}", schedule.stages.len(), cfg.diversity.seeds.len());
    Ok(())
}

fn search(config: &Path, trials: usize, mode: ModeArg, workers: usize, out: &Path) -> anyhow::Result<()> {
    if trials == 0 || workers == 0 {
        bail!(ConfigFailure("--trials and --workers must be >= 1".into()));
    }
    let cfg = load(config)?;
    let base = cfg.run_config().map_err(|e| ConfigFailure(e.to_string()))?;
    let mode = match mode {
        ModeArg::Auto => SearchMode::Auto,
        ModeArg::Fixed => SearchMode::Fixed,
    };
    prepare_out(out, &cfg)?;
    let results = random_search(&cfg.search, mode, trials, &base, workers, Some(out))?;
    write_summary_csv(&out.join("summary.csv"), &results)?;
    let best = &results[0];
    println!("best trial={} objective={:.4}", best.trial, best.objective);
    Ok(())
}

fn baselines(config: &Path, workers: usize, out: &Path) -> anyhow::Result<()> {
    if workers == 0 {
        bail!(ConfigFailure("--workers must be >= 1".into()));
    }
    let cfg = load(config)?;
    let base = cfg.run_config().map_err(|e| ConfigFailure(e.to_string()))?;
    prepare_out(out, &cfg)?;
    let results = run_baselines(&cfg.search, &base, workers, Some(out))?;
    write_summary_csv(&out.join("summary.csv"), &results)?;
    for r in &results {
        println!("{} objective={:.4}", r.kind, r.objective);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train {
            config,
            seed,
            out,
            mode,
            xi,
            ne,
            nb,
            ntheta,
        } => train(config, *seed, out, *mode, *xi, [*ne, *nb, *ntheta]),
        Command::Diversity { config, out } => diversity(config, out),
        Command::Search {
            config,
            trials,
            mode,
            workers,
            out,
        } => search(config, *trials, *mode, *workers, out),
        Command::Baselines { config, workers, out } => baselines(config, *workers, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<ConfigFailure>() => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
