//! The `mmfuse` command line: argument parsing, layered JSON configuration
//! and the pipeline subcommands.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmfuse_core::ErrorKind;
use serde_json::Value;

pub use config::{load_document, parse_override};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired dataset and its manifest.
    Synth,
    /// Resample and normalise every sample of a manifest.
    Preprocess,
    /// Train one model.
    Train,
    /// Train one model several times with consecutive seeds.
    Multirun,
    /// Unimodal and fusion training plus statistical comparison on a shared paired test set.
    Compare,
    /// Evaluate a checkpoint on a manifest split.
    Eval,
    /// Grad-CAM heatmaps and overlays for a checkpoint.
    Explain,
    /// Metrics from confusion matrices and comparisons of saved reports.
    Stats,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Preprocess => "preprocess",
            Command::Train => "train",
            Command::Multirun => "multirun",
            Command::Compare => "compare",
            Command::Eval => "eval",
            Command::Explain => "explain",
            Command::Stats => "stats",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileName {
    Paper,
    Micro,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Base seed (same as `--set seed=N`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scale profile (same as `--set profile=NAME`).
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileName>,
    /// Record that bitwise reproducibility is required.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Override a config value by dotted key, e.g. `trainer.lr=0.001`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", action = clap::ArgAction::Append)]
    set: Vec<String>,
    /// More progress output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Parser)]
#[command(name = "mmfuse", version, about = "Multimodal MRI + ultrasound classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

/// Validated command line.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub command: Command,
    pub config: Option<PathBuf>,
    /// Dotted-key overrides in command-line order (`--seed` and `--profile` included).
    pub overrides: Vec<(String, Value)>,
    pub out: PathBuf,
    pub verbosity: u8,
    pub deterministic: bool,
}

#[derive(Debug)]
pub enum CliError {
    /// Usage errors and `--help` / `--version` output.
    Usage(clap::Error),
    Config(String),
    Core(mmfuse_core::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) => write!(f, "{e}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<mmfuse_core::Error> for CliError {
    fn from(e: mmfuse_core::Error) -> Self {
        CliError::Core(e)
    }
}

pub const EXIT_OK: i32 = 0;
/// Unexpected failures, including panics inside a command.
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(e) => e.exit_code(),
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => EXIT_CONFIG,
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Numeric => EXIT_NUMERIC,
            },
        }
    }
}

/// Parse and validate `argv` (including the program name).
pub fn parse_args<I, T>(argv: I) -> Result<CliConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(CliError::Usage)?;
    let c = cli.common;
    let out = c.out.ok_or_else(|| CliError::Config("--out is required".into()))?;
    let mut overrides: Vec<(String, Value)> = Vec::new();
    let mut push = |key: String, value: Value, flag: &str| -> Result<(), CliError> {
        if let Some((_, prev)) = overrides.iter().find(|(k, _)| *k == key) {
            if *prev != value {
                return Err(CliError::Config(format!("{flag}: conflicting values for {key}: {prev} and {value}")));
            }
            return Ok(());
        }
        overrides.push((key, value));
        Ok(())
    };
    if let Some(seed) = c.seed {
        push("seed".into(), Value::from(seed), "--seed")?;
    }
    if let Some(p) = c.profile {
        let name = match p {
            ProfileName::Paper => "paper",
            ProfileName::Micro => "micro",
        };
        push("profile".into(), Value::from(name), "--profile")?;
    }
    for s in &c.set {
        let (k, v) = parse_override(s)?;
        push(k, v, "--set")?;
    }
    Ok(CliConfig {
        command: cli.command,
        config: c.config,
        overrides,
        out,
        verbosity: c.verbose,
        deterministic: c.deterministic,
    })
}

/// Execute a parsed command; all artifacts go under `cfg.out`.
pub fn run(cfg: &CliConfig) -> Result<(), CliError> {
    let doc = load_document(cfg)?;
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", cfg.out.display())))?;
    let seeds = commands::dispatch(cfg, &doc)?;
    commands::write_run_record(cfg, &doc, &seeds)?;
    Ok(())
}

/// Parse, run and map the outcome to a process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let result = parse_args(argv).map(|cfg| std::panic::catch_unwind(|| run(&cfg)));
    match result {
        Ok(Ok(Ok(()))) => EXIT_OK,
        Ok(Ok(Err(e))) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Ok(Err(_)) => EXIT_OTHER,
        Err(CliError::Usage(e)) => {
            let _ = e.print();
            e.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
