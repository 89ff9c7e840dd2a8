use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cwcf::data::SplitKind;
use cwcf_cli::{commands, config, CliError};
use serde::Serialize;

/// Budgeted classification with costly features.
#[derive(Parser)]
#[command(name = "cwcf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Override a key, e.g. `--set train.lr_start=5e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory (default: <output_dir>/<run id>).
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Evaluate a checkpoint of a finished run.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// `best`, `final`, `latest` or a checkpoint path.
        #[arg(long, default_value = "best")]
        checkpoint: String,
        #[arg(long, default_value = "test")]
        split: SplitKind,
    },
    /// Train over a grid of budget parameters and seeds.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Budget parameters (lambda or b); default from `[sweep]`.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Fixed-order RFE baseline.
    Baseline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        budgets: Vec<f64>,
    },
    /// Exact optimum of a small discrete instance.
    Oracle {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "test")]
        split: SplitKind,
    },
    /// Combined curve over finished runs.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Format {
        path: "<stdout>".into(),
        message: e.to_string(),
    })?;
    println!("{text}");
    Ok(())
}

fn load(cfg: &ConfigArgs) -> Result<config::ResolvedConfig, CliError> {
    Ok(config::load(&cfg.config, &cfg.overrides)?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { cfg, run_dir } => {
            let cfg = load(&cfg)?;
            let (dir, report) = commands::train(&cfg, run_dir.as_deref())?;
            eprintln!("run directory: {}", dir.display());
            print_json(&report)
        }
        Command::Eval { run, checkpoint, split } => print_json(&commands::eval(&run, &checkpoint, split)?),
        Command::Sweep { cfg, values, seeds } => {
            let cfg = load(&cfg)?;
            let grid = cfg.sweep.clone().unwrap_or(config::SweepConfig {
                values: Vec::new(),
                seeds: Vec::new(),
            });
            let values = if values.is_empty() { grid.values } else { values };
            let seeds = if seeds.is_empty() { grid.seeds } else { seeds };
            let (path, report) = commands::sweep(&cfg, &values, &seeds)?;
            eprintln!("sweep report: {}", path.display());
            print_json(&report)
        }
        Command::Baseline { cfg, budgets } => {
            let cfg = load(&cfg)?;
            let (path, report) = commands::baseline(&cfg, &budgets)?;
            eprintln!("baseline report: {}", path.display());
            print_json(&report)
        }
        Command::Oracle { cfg, split } => print_json(&commands::oracle(&load(&cfg)?, split)?),
        Command::Report { runs, out } => {
            let report = commands::report(&runs)?;
            if let Some(out) = out {
                write_file(&out, &report)?;
            }
            print_json(&report)
        }
    }
}

fn write_file<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text + "\n").map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
