mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use commands::Command;
use config::RunConfig;
use error::{CliError, CliResult};
use output::Output;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Sub {
    ScatterSweep,
    Spectrum,
    Pulse,
    Subtract,
    Optimize,
    TwoPhoton,
    Repeater,
    Feasibility,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::ScatterSweep => Command::ScatterSweep,
            Sub::Spectrum => Command::Spectrum,
            Sub::Pulse => Command::Pulse,
            Sub::Subtract => Command::Subtract,
            Sub::Optimize => Command::Optimize,
            Sub::TwoPhoton => Command::TwoPhoton,
            Sub::Repeater => Command::Repeater,
            Sub::Feasibility => Command::Feasibility,
        }
    }
}

/// Spin-exchange photon scattering simulator.
#[derive(Debug, Parser)]
#[command(name = "rydex", version)]
struct Cli {
    command: Sub,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides `jobs`.
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write SVG plots.
    #[arg(long)]
    plot: bool,
}

fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(&cli.config).map_err(|source| CliError::Read { path: cli.config.clone(), source })?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::config("--jobs", "must be at least 1"));
        }
        cfg.jobs = jobs;
    }
    cfg.emit_plots |= cli.plot;
    Ok(cfg)
}

fn execute(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    let cfg = resolve(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::config("jobs", e.to_string()))?;
    let mut out = Output::create(&cfg.out_dir, cfg.emit_plots)?;
    pool.install(|| commands::run(cli.command.into(), &cfg, &mut out))?;
    Ok(out.written)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("rydex {}: {e}", Command::from(cli.command).name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
