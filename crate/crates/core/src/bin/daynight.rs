use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use daynight::config::{ExperimentConfig, RunMode};
use daynight::dreaming::AugmentationMode;
use daynight::envs::{make_env, LevelMode};
use daynight::orchestrator::export::export_dreams;
use daynight::orchestrator::plot::plot_metrics;
use daynight::orchestrator::{evaluate, load_models, mean, LatentPolicy, Trainer};
use daynight::rng::stream_rng;
use daynight::{Error, Result};

#[derive(Parser)]
#[command(name = "daynight", version, about = "Day/night training of latent-imagination agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a world model by day and the agent on dreams by night.
    Train {
        /// Flat key-value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Base preset when no config file is given (paper or desk).
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// dream_rnd, dream_deep, dream_val, dream_mixture, dream_none or offline.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Extra `key=value` overrides.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate a checkpoint on the full level distribution.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
    },
    /// Decode random dream states and their transformations to a PNG grid.
    DreamExport {
        #[arg(long)]
        checkpoint: PathBuf,
        /// none, random_swing, deep_dream, value_diversify or mixture.
        #[arg(long, default_value = "mixture")]
        mode: String,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value = "dreams")]
        out: PathBuf,
    },
    /// Plot test-reward curves from metrics logs.
    Plot {
        #[arg(long, num_args = 1..)]
        logs: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

fn train_config(
    config: Option<PathBuf>,
    preset: Option<String>,
    mode: Option<String>,
    env: Option<String>,
    seed: Option<u64>,
    set: Vec<String>,
) -> Result<ExperimentConfig> {
    let base = match (&config, &preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(p)) => ExperimentConfig::preset(p)?,
        (None, None) => ExperimentConfig::default(),
    };
    let mut pairs = set;
    if let Some(m) = mode {
        m.parse::<RunMode>()?;
        pairs.push(format!("run_mode=\"{m}\""));
    }
    if let Some(e) = env {
        pairs.push(format!("env=\"{e}\""));
    }
    if let Some(s) = seed {
        pairs.push(format!("seed={s}"));
    }
    let cfg = base.with_overrides(&pairs)?;
    cfg.check()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, preset, mode, env, seed, out, resume, set } => {
            let mut trainer = match resume {
                Some(path) => {
                    if config.is_some() || preset.is_some() || mode.is_some() || env.is_some() || seed.is_some() || !set.is_empty() {
                        return Err(Error::Config("--resume takes its configuration from the checkpoint".into()));
                    }
                    Trainer::resume(&path, Some(out))?
                }
                None => Trainer::new(train_config(config, preset, mode, env, seed, set)?, out)?,
            };
            let records = trainer.run()?;
            if let Some(last) = records.last() {
                println!(
                    "finished {} epochs; final test reward {:.3}; outputs in {}",
                    records.len(),
                    last.test_reward,
                    trainer.out_dir().display()
                );
            }
        }
        Command::Eval { checkpoint, episodes } => {
            let (cfg, wm, agent) = load_models(&checkpoint)?;
            let mut env = make_env(&cfg.env, cfg.train_levels, LevelMode::Test)?;
            let mut policy = LatentPolicy::new(&wm, &agent);
            let mut rng = stream_rng(cfg.seed, "cli-eval", 0);
            let returns = evaluate(env.as_mut(), &mut policy, LevelMode::Test, episodes, &mut rng)?;
            println!("episodes {episodes}; mean return {:.4}; returns {returns:?}", mean(&returns));
        }
        Command::DreamExport { checkpoint, mode, count, out } => {
            let (cfg, wm, agent) = load_models(&checkpoint)?;
            let path = export_dreams(&wm, &agent, &cfg, AugmentationMode::parse(&mode)?, count, &out)?;
            println!("{}", path.display());
        }
        Command::Plot { logs, out } => {
            for p in plot_metrics(&logs, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                Error::ConfigList(errs) => {
                    eprintln!("invalid configuration:");
                    for err in errs {
                        eprintln!("  - {err}");
                    }
                }
                other => eprintln!("error: {other}"),
            }
            if e.is_config() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
