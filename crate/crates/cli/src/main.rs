use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use polydecay_cli::commands;
use polydecay_cli::config::ExperimentConfig;
use polydecay_cli::CliError;

/// Simulate and audit viscous time discretizations of damped coupled waves.
#[derive(Debug, Parser)]
#[command(name = "polydecay", version)]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every random draw (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel trials.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Energy trace CSV and run summary.
    Trace,
    /// Δt-uniformity of polynomial decay.
    Decay,
    /// Observability constants per Δt.
    Observability,
    /// Spectral gap and observability-bound audit.
    Spectrum,
    /// Empirical Ingham constants, scalar and clustered.
    Ingham,
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    // Kept out of the config so the echoed config does not depend on it.
    let out = cli.out.or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    match cli.command {
        Command::Trace => commands::cmd_trace(&cfg, &out),
        Command::Decay => commands::cmd_decay(&cfg, &out),
        Command::Observability => commands::cmd_observability(&cfg, &out),
        Command::Spectrum => commands::cmd_spectrum(&cfg, &out),
        Command::Ingham => commands::cmd_ingham(&cfg, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("polydecay: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
