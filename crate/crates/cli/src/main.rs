//! `axregion` command-line tool.
//!
//! Exit codes: 0 success, 1 input error, 2 configuration or shape error,
//! 3 external-service failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "axregion", version, about = "Region decomposition and page digests for accessibility trees")]
pub struct Cli {
    /// Seed for every randomized step (default 0; for `train`, overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-file work (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Heuristic,
    Lm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and preprocess a tree, printing its canonical form.
    Parse {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the tree as parsed, without preprocessing.
        #[arg(long)]
        raw: bool,
    },
    /// Split a tree into regions.
    Decompose {
        input: PathBuf,
        /// Binary model checkpoint or role-rule TOML file.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        /// Attach a purpose and state summary to each region.
        #[arg(long = "abstract")]
        abstract_regions: bool,
        #[arg(long, value_enum, default_value_t = BackendArg::Heuristic)]
        backend: BackendArg,
        #[arg(long)]
        lm_config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a decomposition model on a directory of `.axtree`/`.regions` pairs.
    Train {
        data_dir: PathBuf,
        /// Training configuration (TOML); defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch log (JSON lines); defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Region precision/recall/F1 of predictions against ground truth.
    Eval {
        /// Directory of predicted `.regions`/`.json` files, or a checkpoint to sweep.
        pred: PathBuf,
        /// Directory of `.axtree` files with `.regions` ground truth.
        truth: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Thresholds to sweep when `pred` is a checkpoint.
        #[arg(long, value_delimiter = ',')]
        taus: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Replay a trace through page digests and report token use.
    Digest {
        trace: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        /// Abstraction and selection backend.
        #[arg(long, value_enum, default_value_t = BackendArg::Heuristic)]
        backend: BackendArg,
        #[arg(long)]
        lm_config: Option<PathBuf>,
        /// Most regions the offline selector keeps per page.
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        /// Directory for per-step digests and the JSON report.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// LCA-depth and change-ratio histograms over a trace.
    Analyze {
        trace: PathBuf,
        /// Uniform random node pairs per snapshot for the baseline.
        #[arg(long, default_value_t = 200)]
        baseline_pairs: usize,
    },
    /// Write a synthetic labeled corpus.
    GenCorpus {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        /// Child roles whose incoming edge is a cut.
        #[arg(long, value_delimiter = ',', default_values_t = ["navigation".to_string(), "list".to_string(), "form".to_string()])]
        roles: Vec<String>,
        #[arg(long, default_value_t = 8)]
        min_nodes: usize,
        #[arg(long, default_value_t = 28)]
        max_nodes: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    let jobs = cli.jobs;
    match axregion::par::with_threads(jobs, || commands::run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
