use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpc_core::harness::{self, HarnessConfig};

/// Disturbance predictive control pipeline.
#[derive(Parser, Debug)]
#[command(name = "dpc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// INI-style configuration file; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides `run.out`, the artifact directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Extra `section.key=value` overrides, applied after the file.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Record a random-motion dataset for `collect.arm`.
    Collect,
    /// Train the latent dynamic adapter for `adapter.arm`.
    TrainAdapter,
    /// Train a `migrate.arm` encoder against the frozen decoder.
    Migrate,
    /// Train the SAC estimator (or run the bandit check with `policy.bandit`).
    TrainPolicy,
    /// Compare MBC and DPC returns over tasks, arms and seeds.
    Compare,
    /// Run and log one episode.
    Eval,
    /// Print the effective configuration.
    ShowConfig,
}

fn config(cli: &Cli) -> dpc_core::Result<HarnessConfig> {
    let mut cfg = match &cli.config {
        Some(p) => HarnessConfig::load(p)?,
        None => HarnessConfig::default(),
    };
    for s in &cli.set {
        cfg.apply_override(s)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> dpc_core::Result<Vec<String>> {
    let cfg = config(cli)?;
    match cli.command {
        Command::Collect => harness::cmd_collect(&cfg),
        Command::TrainAdapter => harness::cmd_train_adapter(&cfg),
        Command::Migrate => harness::cmd_migrate(&cfg),
        Command::TrainPolicy => harness::cmd_train_policy(&cfg),
        Command::Compare => harness::cmd_compare(&cfg),
        Command::Eval => harness::cmd_eval(&cfg),
        Command::ShowConfig => Ok(cfg.to_ini().lines().map(str::to_string).collect()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("dpc: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
