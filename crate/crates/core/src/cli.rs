//! Command-line front end. Each subcommand is a plain function so it can be
//! driven in-process.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{Config, Preset};
use crate::data::Dataset;
use crate::persist::load_ensemble;
use crate::plant::{generate_excitation, Plant};
use crate::runtime::{self, ExperimentReport, ENSEMBLE_DIR};
use crate::slow_learning::MonitorVerdict;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "twofold", version, about = "Slow/fast model adaptation harness")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file (defaults to the preset).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in configuration used when no file is given.
    #[arg(long, global = true, value_parser = ["desk", "aroma"])]
    pub preset: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (run, report) or file (simulate).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one regime of the plant and write a dataset CSV.
    Simulate {
        #[arg(long, default_value_t = 0)]
        regime: usize,
        #[arg(long, default_value_t = 1000)]
        length: usize,
    },
    /// Run the scripted scenario and write report, logs and ensemble.
    Run {
        /// Start from the ensemble persisted in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Print the model comparison and verdict timeline of a run.
    Report {
        run_dir: Option<PathBuf>,
    },
    /// One-shot verdict on a dataset against a persisted ensemble.
    Monitor {
        #[arg(long)]
        ensemble: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

/// Configuration from `--config` or `--preset`, with `--seed` and `--out`
/// applied on top.
pub fn resolve_config(args: &GlobalArgs) -> Result<Config> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), _) => Config::load(path)?,
        (None, Some(p)) => Config::preset(p.parse::<Preset>()?),
        (None, None) => Config::desk(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

pub fn cmd_simulate(config: &Config, regime: usize, length: usize, out_path: &Path) -> Result<Dataset<f64>> {
    if length == 0 {
        return Err(Error::config("length", "must be positive"));
    }
    let inputs = generate_excitation(&config.excitation, &config.plant, regime, 0, length, config.seed)?;
    let plant = Plant::new(config.plant.clone())?.with_noise_seed(config.seed);
    let mut state = plant.burn_in_state(&inputs[0]);
    plant.enter_regime(&mut state, regime)?;
    let data = plant.simulate(&mut state, &inputs)?;
    data.save_csv(out_path)?;
    Ok(data)
}

pub fn cmd_run(config: &Config, out: &Path, resume: bool) -> Result<ExperimentReport> {
    let initial = if resume {
        let e = load_ensemble(&out.join(ENSEMBLE_DIR))?;
        log::info!("resuming with {} member(s)", e.len());
        Some(e)
    } else {
        None
    };
    runtime::execute(config, out, initial)
}

pub fn cmd_report(run_dir: &Path) -> Result<String> {
    if !run_dir.is_dir() {
        return Err(Error::io(run_dir, std::io::Error::new(std::io::ErrorKind::NotFound, "run directory not found")));
    }
    Ok(runtime::read_report(run_dir)?.to_string())
}

pub fn cmd_monitor(ensemble_dir: &Path, data_path: &Path, theta: f64) -> Result<MonitorVerdict> {
    let ensemble = load_ensemble(ensemble_dir)?;
    let data = Dataset::load_csv(data_path)?;
    ensemble.monitor(&data, theta)
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate { regime, length } => {
            let config = resolve_config(g)?;
            let out = g.out.clone().unwrap_or_else(|| PathBuf::from(format!("regime{regime}.csv")));
            let d = cmd_simulate(&config, *regime, *length, &out)?;
            log::info!("wrote {} samples to {}", d.len(), out.display());
        }
        Command::Run { resume } => {
            let config = resolve_config(g)?;
            let out = g.out.clone().unwrap_or_else(|| config.output_dir.clone());
            let report = cmd_run(&config, &out, *resume)?;
            print!("{report}");
        }
        Command::Report { run_dir } => {
            let dir = run_dir
                .clone()
                .or_else(|| g.out.clone())
                .unwrap_or_else(|| Config::desk().output_dir);
            print!("{}", cmd_report(&dir)?);
        }
        Command::Monitor { ensemble, data } => {
            let config = resolve_config(g)?;
            let v = cmd_monitor(ensemble, data, config.slow.theta)?;
            let fractions: Vec<String> = v.input_fractions.iter().map(|f| format!("{f:.3}")).collect();
            println!("{} (errors {:.3}, inputs [{}])", v.tag, v.error_fraction, fractions.join(", "));
        }
    }
    Ok(())
}
