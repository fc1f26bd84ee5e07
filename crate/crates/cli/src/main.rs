//! `lorp`: similarity, locality, pruning plans and synthetic fixtures from
//! the command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 input format or I/O error
//! (including a failed `check`), 4 computation error.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lorp_core::{ClusterCount, Method};

use crate::config::{Overrides, RunConfig, SynthMode};
use crate::error::{CliError, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "lorp", version, about = "Locality-aware depth-pruning planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Args)]
struct Flags {
    /// JSON file with default settings; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Normalization stabilizer added to every vector norm.
    #[arg(long, global = true)]
    epsilon: Option<f64>,

    /// Cluster count, or `auto` to derive it from the locality score.
    #[arg(long, global = true, value_name = "INT|auto")]
    k: Option<ClusterCount>,

    /// Number of layers to remove.
    #[arg(long, global = true)]
    budget: Option<usize>,

    /// Seed for clustering restarts and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Allocation method: cluster-aware `lorp` or the `contiguous` window baseline.
    #[arg(long, global = true, value_name = "lorp|contiguous")]
    method: Option<Method>,

    /// Worker threads for similarity accumulation.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Skip the similarity heatmap CSV.
    #[arg(long, global = true)]
    no_heatmap: bool,

    /// Skip the distance profile CSV.
    #[arg(long, global = true)]
    no_profile: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stream one or more activation dumps into a layer similarity matrix.
    Sim {
        #[arg(required = true, value_name = "DUMP")]
        dumps: Vec<PathBuf>,
    },
    /// Report the locality score, recommended cluster count and distance profile.
    Locality {
        #[arg(value_name = "MATRIX_JSON")]
        matrix: PathBuf,
    },
    /// Build a pruning plan from a similarity matrix.
    Plan {
        #[arg(value_name = "MATRIX_JSON")]
        matrix: PathBuf,
    },
    /// Generate a planted-cluster dump or similarity matrix.
    Synth {
        #[arg(value_name = "SPEC_JSON")]
        spec: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<SynthMode>,
        /// Samples in the generated dump.
        #[arg(long)]
        samples: Option<usize>,
        /// Tokens per generated sample.
        #[arg(long)]
        tokens: Option<usize>,
    },
    /// Run the invariant battery on a similarity matrix.
    Check {
        #[arg(value_name = "MATRIX_JSON")]
        matrix: PathBuf,
    },
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            epsilon: self.epsilon,
            k: self.k,
            budget: self.budget,
            seed: self.seed,
            method: self.method,
            workers: self.workers,
            out: self.out.clone(),
            heatmap: self.no_heatmap.then_some(false),
            profile: self.no_profile.then_some(false),
            ..Default::default()
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.flags.config {
        Some(path) => Overrides::from_file(path)?,
        None => Overrides::default(),
    };
    let mut flags = cli.flags.overrides();
    let (name, inputs): (&'static str, Vec<PathBuf>) = match &cli.command {
        Command::Sim { dumps } => ("sim", dumps.clone()),
        Command::Locality { matrix } => ("locality", vec![matrix.clone()]),
        Command::Plan { matrix } => ("plan", vec![matrix.clone()]),
        Command::Synth {
            spec,
            mode,
            samples,
            tokens,
        } => {
            flags.mode = *mode;
            flags.samples = *samples;
            flags.tokens = *tokens;
            ("synth", vec![spec.clone()])
        }
        Command::Check { matrix } => ("check", vec![matrix.clone()]),
    };
    let seed_flag = flags.seed.or(file.seed);
    let cfg = RunConfig::resolve(name, &inputs, flags.over(file))?;
    match &cli.command {
        Command::Sim { dumps } => commands::sim(&cfg, dumps),
        Command::Locality { matrix } => commands::locality(&cfg, matrix),
        Command::Plan { matrix } => commands::plan(&cfg, matrix),
        Command::Synth { spec, .. } => commands::synth(&cfg, spec, seed_flag),
        Command::Check { matrix } => commands::check(&cfg, matrix),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lorp: {e}");
            e.exit_code()
        }
    }
}
