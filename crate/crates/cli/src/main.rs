//! `gridloc`: experiments, head FLOP ledgers, NMS and sampler benchmarks,
//! and AP evaluation from the command line.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ConfigError;

#[derive(Debug, Parser)]
#[command(name = "gridloc", version, about = "Grid-point localization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML run configuration; the bundled default is used when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Placement {
    Before,
    After,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare grid variants on synthetic scenes; writes metrics.json and proposals.csv.
    Simulate(RunArgs),
    /// Per-layer MAC ledger of the light and original grid heads.
    Flops {
        #[arg(long, default_value_t = gridloc_core::headshape::DEFAULT_CHANNELS)]
        channels: usize,
        #[arg(long = "points", default_value_t = 9)]
        n_points: usize,
        /// Position of the depthwise fusion layer in the light head.
        #[arg(long, value_enum, default_value_t = Placement::Before)]
        fusion: Placement,
        /// Also write flops.json here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Count pairwise IoU evaluations of the single- and double-NMS pipelines.
    NmsBench(RunArgs),
    /// Monte Carlo variance of per-batch positive totals, both sampling modes.
    SampleStats(RunArgs),
    /// COCO-style AP of detections against ground truth.
    Eval {
        /// Lines of `image_id class score x1 y1 x2 y2`.
        #[arg(long, value_name = "PATH")]
        dets: PathBuf,
        /// Lines of `image_id class x1 y1 x2 y2`.
        #[arg(long, value_name = "PATH")]
        gts: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

/// Classified failure; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Io(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.into())
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("GRIDLOC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        Failure::Usage(anyhow::anyhow!(
            "GRIDLOC_THREADS must be a non-negative integer, got {raw:?}"
        ))
    })?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(anyhow::anyhow!("cannot size thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    match cli.command {
        Command::Simulate(args) => commands::simulate(&args),
        Command::Flops {
            channels,
            n_points,
            fusion,
            out,
            json,
        } => commands::flops(channels, n_points, fusion, out.as_deref(), json),
        Command::NmsBench(args) => commands::nms_bench(&args),
        Command::SampleStats(args) => commands::sample_stats(&args),
        Command::Eval { dets, gts, out, json } => commands::eval(&dets, &gts, out.as_deref(), json),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Io(e)) => {
            eprintln!("I/O error: {e:#}");
            ExitCode::from(3)
        }
    }
}
