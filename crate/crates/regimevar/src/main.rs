use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use regimevar::commands;
use regimevar::config::RunConfig;
use regimevar::Result;

/// Regime-conditional VaR and stress scenario design.
#[derive(Parser)]
#[command(name = "regimevar", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Cap the worker thread count (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the regime model on the trailing window and dump the state.
    Fit,
    /// Rolling VaR backtest against historical-simulation and Gaussian
    /// baselines.
    VarBacktest,
    /// Design stress scenarios (target loss + expected risk-factor
    /// shifts).
    StressDesign,
    /// Generate a synthetic market panel with ground truth.
    GenSynth,
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| regimevar::Error::Config("--config PATH is required".to_string()))?;
    let config = RunConfig::load(config_path)?.with_overrides(cli.seed, cli.out.clone());
    match cli.command {
        Command::Fit => commands::cmd_fit(&config),
        Command::VarBacktest => commands::cmd_var_backtest(&config),
        Command::StressDesign => commands::cmd_stress_design(&config),
        Command::GenSynth => commands::cmd_gen_synth(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .ok();
    }
    match run(&cli) {
        Ok(files) => {
            for file in files {
                println!("wrote {}", file.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
