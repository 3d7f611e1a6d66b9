//! The `geotopic` command line: staged, file-based pipeline runs with a
//! manifest next to every output.

pub mod commands;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::{CliError, EXIT_EMPTY, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};
pub use manifest::{RunManifest, MANIFEST_FILE};

#[derive(Debug, Parser)]
#[command(name = "geotopic", version, about = "Spatio-temporal topic mining with nonnegative tensor factorization")]
pub struct Cli {
    /// Worker threads for the numerical kernels; outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Record wall-clock seconds in traces, bench tables and manifests.
    #[arg(long, global = true)]
    pub timing: bool,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the (term × location × time) count tensor from tweets.
    Ingest(IngestArgs),
    /// Fit a nonnegative CP model to a tensor.
    Factorize(FactorizeArgs),
    /// Export per-component topic, spatial and temporal patterns.
    Extract(ExtractArgs),
    /// Generate a planted model, its observation and a matching corpus.
    Synth(SynthArgs),
    /// Compare ccd, sacd and the NMF baseline on a planted directory.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BinArg {
    Day,
    Week,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CountModeArg {
    Occurrence,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgoArg {
    Ccd,
    Sacd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    /// 50×20×30, rank 5, disjoint supports, 1% noise.
    Default,
    /// Two components with one shared term support.
    Adversarial,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Tweets, one JSON object per line.
    #[arg(long)]
    pub input: PathBuf,
    /// CSV with name,canonical_id,lat,lon.
    #[arg(long)]
    pub gazetteer: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// One stopword per line; replaces the built-in list.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// One keyword per line; replaces the built-in list.
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "day")]
    pub bin: BinArg,
    #[arg(long, value_enum, default_value = "occurrence")]
    pub count_mode: CountModeArg,
    /// First day of the time axis (YYYY-MM-DD); default is the earliest kept tweet.
    #[arg(long)]
    pub origin: Option<NaiveDate>,
    /// Number of time bins; default reaches the latest kept tweet.
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    /// Stop when a full sweep changes the objective by less than this, relatively.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// τ for sacd element selection.
    #[arg(long, default_value_t = 0.01)]
    pub sacd_threshold: f64,
    /// sacd reactivates every element this often.
    #[arg(long, default_value_t = 10)]
    pub refresh_interval: usize,
    /// Do not fold duplicated components at convergence.
    #[arg(long)]
    pub no_merge: bool,
}

#[derive(Debug, Args)]
pub struct FactorizeArgs {
    /// A `.coo` tensor file, or a directory holding `tensor.coo`.
    #[arg(long)]
    pub tensor: PathBuf,
    #[arg(long)]
    pub rank: usize,
    #[arg(long, value_enum, default_value = "ccd")]
    pub algo: AlgoArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory written by `factorize`.
    #[arg(long)]
    pub model: PathBuf,
    /// Directory written by `ingest` (terms, locations, time axis).
    #[arg(long)]
    pub indices: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Planted-model description (JSON).
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Directory written by `synth`.
    #[arg(long)]
    pub planted: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Solver seed; defaults to the planted seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to the planted rank.
    #[arg(long)]
    pub rank: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    match commands::dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}
