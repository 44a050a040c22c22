//! Command-line driver: binary analysis, dataset building, decompilation
//! requests, evaluation and reporting.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use binlift_core::{Bitness, OptLevel};
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or configuration; exit status 2.
    #[error("{0}")]
    Usage(String),
    /// Anything that failed while doing the work; exit status 1.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

pub(crate) fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "binlift", version, about = "Decompile stripped x86 functions with a language model and score the results")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Validate inputs and configuration without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Control flow graph of one function as JSON.
    ExtractCfg(FunctionArgs),
    /// Data mapping table of one function as JSON.
    ExtractData {
        #[command(flatten)]
        function: FunctionArgs,
        /// Proximity window in bytes.
        #[arg(long)]
        window: Option<u64>,
    },
    /// Decompilation prompt for one function.
    Prompt {
        #[command(flatten)]
        function: FunctionArgs,
        /// Optimization level the binary was built with.
        #[arg(long, value_parser = parse_opt)]
        opt: OptLevel,
        #[arg(long)]
        no_assembly: bool,
        #[arg(long)]
        token_budget: Option<usize>,
    },
    /// Dataset construction.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Request candidate decompilations for every sample.
    Decompile(DecompileArgs),
    /// Recompile and re-run candidates, writing one score record per sample.
    Evaluate(EvaluateArgs),
    /// Aggregate score records into the per-level table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct FunctionArgs {
    /// ELF executable, possibly stripped.
    pub binary: PathBuf,
    /// Function name.
    #[arg(long = "func")]
    pub func: String,
    /// Start address, when the symbol table lacks the function.
    #[arg(long, value_parser = parse_addr)]
    pub start: Option<u64>,
    /// End address (exclusive).
    #[arg(long, value_parser = parse_addr, requires = "start")]
    pub end: Option<u64>,
    /// Symbol sidecar written next to dataset binaries.
    #[arg(long, conflicts_with = "start")]
    pub symbols: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Compile, strip and analyse every bundle at every level and bitness.
    Build(DatasetBuildArgs),
}

#[derive(Debug, Args)]
pub struct DatasetBuildArgs {
    /// Bundle directory; overrides `corpus` from the configuration.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output directory for samples.jsonl and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_opt)]
    pub opt: Vec<OptLevel>,
    #[arg(long, value_delimiter = ',', value_parser = parse_bits)]
    pub bits: Vec<Bitness>,
    /// Also keep the stripped binaries and symbol sidecars under OUT/bin.
    #[arg(long)]
    pub keep_binaries: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    /// The configured chat-completion endpoint.
    Endpoint,
    /// Echo each sample's ground-truth source; checks the pipeline itself.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Greedy,
    Sampled,
}

#[derive(Debug, Args)]
pub struct DecompileArgs {
    #[arg(long)]
    pub samples: PathBuf,
    /// Candidate sets, one JSON line per sample.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Backend::Endpoint)]
    pub backend: Backend,
    /// Decoding preset; replaces the configured decode settings.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Candidates per sample.
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub url: Option<String>,
    /// Only the first LIMIT samples.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub candidates: PathBuf,
    /// Bundle directory; overrides `corpus` from the configuration.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Score records, one JSON line per sample.
    #[arg(long)]
    pub records: PathBuf,
    /// Also write the aggregated report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn parse_addr(s: &str) -> Result<u64, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|e| format!("bad address {s:?}: {e}"))
}

fn parse_opt(s: &str) -> Result<OptLevel, String> {
    s.parse::<OptLevel>().map_err(|e| e.to_string())
}

fn parse_bits(s: &str) -> Result<Bitness, String> {
    s.parse::<Bitness>().map_err(|e| e.to_string())
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("binlift: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("Try 'binlift --help' for usage.");
            }
            e.exit_code()
        }
    }
}
