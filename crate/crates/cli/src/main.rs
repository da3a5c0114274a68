//! `sphs`: configuration-driven experiment runner.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use commands::Command;
use config::ExperimentConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "sphs", version, about = "Stochastic port-Hamiltonian laboratory")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Experiment configuration (strict JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the configuration's `out`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(cli: Cli) -> Result<String, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(e.to_string()))?;
    }
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    cfg.resolve(cli.seed, cli.out.map(|p| p.to_string_lossy().into_owned()));
    let artifacts = commands::run(cli.command, &cfg)?;
    let dir = PathBuf::from(cfg.out.as_deref().unwrap_or("out"));
    artifacts.write(&dir, &cfg)?;
    Ok(format!("{} -> {}", artifacts.summary, dir.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sphs: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
