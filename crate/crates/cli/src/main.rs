//! `rulcast`: ingest SCADA exports, train leave-one-out forecasters and
//! report D_k.
//!
//! Settings resolve as CLI flag, then the `--config` JSON document, then the
//! built-in default. Unknown keys in the JSON document are rejected.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};
use error::CliError;

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\ncheckpoint format: 1",
    "\nwindowed dataset format: 1"
);

#[derive(Debug, Parser)]
#[command(name = "rulcast", version, long_version = LONG_VERSION, about)]
struct Cli {
    /// Log more (repeat for debug output)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split SCADA and failure-log CSVs into per-failure datasets
    Ingest {
        #[arg(long)]
        scada: PathBuf,
        #[arg(long)]
        failures: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of SCADA parameter columns [default: 82]
        #[arg(long)]
        m: Option<usize>,
        /// Minimum logs for a valid dataset [default: l + fw + 100]
        #[arg(long)]
        min_logs: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write a seeded synthetic SCADA fixture
    Synth {
        /// Synthetic fixture parameters as JSON
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave-one-failure-out training
    Train {
        /// Directory written by `ingest`
        #[arg(long)]
        data: PathBuf,
        /// Failure tag held out for testing
        #[arg(long, required_unless_present = "all_targets", conflicts_with = "all_targets")]
        target: Option<u32>,
        /// Hold out every failure in turn, in parallel
        #[arg(long)]
        all_targets: bool,
        /// forenet2d, forenet3d, cnn, lstm, cnn-lstm, cnn-am, lstm-am or cnn-m
        #[arg(long)]
        model: String,
        /// Output root [default: <data>/runs]
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Forecast trace of one failure from a checkpoint
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target: u32,
        /// Output directory [default: the checkpoint's directory]
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// D_k table from every trace under a directory
    Evaluate {
        #[arg(long)]
        traces: PathBuf,
        /// Output file [default: <traces>/dk_table.csv]
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Tables, grid and SVG charts from every trace under a directory
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip the SVG charts
        #[arg(long)]
        no_svg: bool,
        /// Also write parameter correlation matrices for these datasets
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest {
            scada,
            failures,
            out,
            m,
            min_logs,
            config,
            overrides,
        } => {
            let mut cfg = RunConfig::load(config.as_deref(), &overrides)?;
            if let Some(m) = m {
                cfg.m = m;
            }
            if min_logs.is_some() {
                cfg.min_logs = min_logs;
            }
            commands::ingest(&scada, &failures, &out, &cfg)
        }
        Command::Synth { config, seed, out } => commands::synth(config.as_deref(), seed, &out),
        Command::Train {
            data,
            target,
            all_targets: _,
            model,
            out,
            config,
            overrides,
        } => {
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            let out = out.unwrap_or_else(|| data.join("runs"));
            commands::train(&data, target.map(|t| vec![t]), &model, &out, &cfg)
        }
        Command::Forecast {
            checkpoint,
            data,
            target,
            out,
            config,
            overrides,
        } => {
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            commands::forecast_cmd(&checkpoint, &data, target, out.as_deref(), &cfg)
        }
        Command::Evaluate {
            traces,
            out,
            config,
            overrides,
        } => {
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            commands::evaluate(&traces, out.as_deref(), &cfg)
        }
        Command::Report {
            results,
            out,
            no_svg,
            data,
            config,
            overrides,
        } => {
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            commands::report(&results, &out, !no_svg, data.as_deref(), &cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let err = CliError::usage(e.kind().to_string());
            eprintln!("{}", err.json_line());
            return ExitCode::from(err.kind.exit_code());
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.json_line());
            ExitCode::from(e.kind.exit_code())
        }
    }
}
