//! `divboot`: Cressie-Read minimum divergence estimation, generalized
//! bootstrap weights and conditional large-deviation experiments.

mod commands;
mod config;
mod output;
mod selftest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use divboot_core::estimation::MdeOptions;

use crate::config::{ExperimentConfig, ModelSpec};

#[derive(Debug, Parser)]
#[command(name = "divboot", version, about = "Minimum divergence estimation and weighted bootstrap rate experiments")]
struct Cli {
    /// Seed overriding the one in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Replica count overriding the config (sample size for weights-check,
    /// draw count for bootstrap).
    #[arg(long, global = true)]
    replicas: Option<usize>,

    /// Output CSV path; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for Monte Carlo replicas.
    #[arg(long, global = true, env = "DIVBOOT_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Divergence, conjugate divergence and mass infimum between Q and P.
    Divergence {
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        q: Vec<f64>,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        p: Vec<f64>,
    },
    /// Minimum divergence estimate from a sample.
    Estimate {
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 8)]
        starts: usize,
    },
    /// Weighted bootstrap replicates of the minimum divergence estimate.
    Bootstrap {
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
        /// Index of the weight law; defaults to the divergence index.
        #[arg(long, allow_hyphen_values = true)]
        weights_gamma: Option<f64>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 200)]
        draws: usize,
    },
    /// Conditional event-probability slope from a config file.
    LdpRate { config: PathBuf },
    /// Divergence-tail slope from a config file.
    TailRate { config: PathBuf },
    /// Bahadur slope from a config file.
    Bahadur { config: PathBuf },
    /// Moment and cumulant checks of the weight samplers.
    WeightsCheck {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, num_args = 1..,
              default_values_t = [-1.0, -0.5, 0.0, 0.25, 0.5, 0.75, 1.0, 2.0])]
        gamma: Vec<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        n: usize,
        #[arg(long, default_value_t = 3.0)]
        k_sigma: f64,
    },
    /// Runs the invariant suite.
    Selftest,
    /// Runs any experiment config, dispatching on its `command` field.
    Run { config: PathBuf },
}

const DEFAULT_SEED: u64 = 7;

fn load_expecting(path: &Path, expected: &str) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path)?;
    if cfg.command() != expected {
        bail!(
            "config {} has command {:?}; this subcommand expects {expected:?}",
            path.display(),
            cfg.command()
        );
    }
    Ok(cfg)
}

fn build_config(cli: &Cli) -> Result<Option<ExperimentConfig>> {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    Ok(Some(match &cli.command {
        Command::Divergence { .. } => return Ok(None),
        Command::Estimate { gamma, model, data, starts } => ExperimentConfig::Estimate {
            model: ModelSpec::load(model)?,
            data: data.clone(),
            gamma: *gamma,
            options: MdeOptions { starts: *starts, ..MdeOptions::default() },
            output: None,
        },
        Command::Bootstrap { gamma, weights_gamma, model, data, draws } => ExperimentConfig::Bootstrap {
            model: ModelSpec::load(model)?,
            data: data.clone(),
            gamma: *gamma,
            gamma_weights: *weights_gamma,
            draws: *draws,
            seed,
            options: MdeOptions::default(),
            output: None,
        },
        Command::LdpRate { config } => load_expecting(config, "ldp_rate")?,
        Command::TailRate { config } => load_expecting(config, "tail_rate")?,
        Command::Bahadur { config } => load_expecting(config, "bahadur")?,
        Command::WeightsCheck { gamma, n, k_sigma } => ExperimentConfig::WeightsCheck {
            gammas: gamma.clone(),
            n: *n,
            seed,
            k_sigma: *k_sigma,
            output: None,
        },
        Command::Selftest => ExperimentConfig::Selftest { seed, output: None },
        Command::Run { config } => ExperimentConfig::load(config)?,
    }))
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("cannot configure the worker pool")?;
    }
    if let Command::Divergence { gamma, q, p } = &cli.command {
        let table = commands::divergence_report(*gamma, q, p)?;
        table.emit(cli.out.as_deref(), "none", None)?;
        return Ok(true);
    }
    let mut cfg = build_config(&cli)?.expect("non-divergence commands build a config");
    cfg.override_with(cli.seed, cli.replicas);
    let out = cli.out.clone().or_else(|| cfg.output().map(PathBuf::from));
    let outcome = commands::execute(&cfg)?;
    outcome.table.emit(out.as_deref(), &cfg.digest(), cfg.seed())?;
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
