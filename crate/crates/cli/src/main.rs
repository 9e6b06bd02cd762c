use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ratein_cli::commands;
use ratein_cli::config::RunConfig;
use ratein_cli::CliError;

/// Adaptive inference-time dropout: training, rate adaptation, Monte Carlo
/// uncertainty runs, evaluation, and experiment sweeps.
#[derive(Parser)]
#[command(name = "ratein", version, about)]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Validate the configuration and print the plan without executing.
    #[arg(long, global = true)]
    dry_run: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a generated dataset and save it.
    Train,
    /// Adapt per-site dropout rates for a batch of instances.
    Ratein,
    /// Run Monte Carlo dropout passes and summarize predictions.
    Mc,
    /// Compute metrics from existing summaries and a dataset.
    Evaluate,
    /// Run a scripted experiment sweep.
    Experiment,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config PATH is required"))?;
    let mut cfg = RunConfig::load(config_path)?;
    cfg.apply_overrides(cli.seed, cli.workers, cli.out);
    match cli.command {
        Command::Train => commands::cmd_train(&cfg, cli.dry_run),
        Command::Ratein => commands::cmd_ratein(&cfg, cli.dry_run),
        Command::Mc => commands::cmd_mc(&cfg, cli.dry_run),
        Command::Evaluate => commands::cmd_evaluate(&cfg, cli.dry_run),
        Command::Experiment => commands::cmd_experiment(&cfg, cli.dry_run),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RATEIN_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
