//! Command-line workflows: generate, train, evaluate, analyze, tune,
//! sweep-ell and triple-basis.

mod commands;
mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{
    BasisInstance, BasisSection, DataFormat, DataSection, ModelSection, OutputSection, RunConfig, DEFAULT_SEED_COUNT,
};

use crate::Error;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "setchoice", version, about = "Set-dependent aggregation models for discrete choice")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a dataset from `[data.generator]`.
    Generate(CommonArgs),
    /// Train one model per seed and report test metrics.
    Train(CommonArgs),
    /// Score a saved model on the configured data.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Model snapshot; overrides `[model] snapshot`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train the model and `[model] compare` presets, then partition test sets by correctness.
    Analyze(CommonArgs),
    /// Random hyperparameter search per seed.
    Tune(CommonArgs),
    /// Accuracy and κ across aggregation dimensions.
    SweepEll {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated ℓ values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
    },
    /// Build triple-basis circuits and check isolation across scales M.
    TripleBasis {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated scales M.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
}

#[derive(Clone, Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base seed; expands to consecutive seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Explicit comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub ell: Option<usize>,
    /// Drop sets larger than this.
    #[arg(long = "max-items")]
    pub max_items: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    Config(Error),
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration error: {e}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::UnknownPreset { .. } => CliError::Config(e),
            _ => CliError::Runtime(e),
        }
    }
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Loads the config named in `args` (or defaults) and applies flag overrides.
pub fn resolve(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
        cfg.seeds = None;
    }
    if let Some(seeds) = &args.seeds {
        cfg.seeds = Some(seeds.clone());
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    if let Some(p) = &args.preset {
        cfg.model.preset = p.clone();
    }
    if let Some(ell) = args.ell {
        cfg.model.ell = Some(ell);
    }
    if let Some(n) = args.max_items {
        cfg.data.max_items = Some(n);
    }
    cfg.seeds = Some(cfg.seed_list());
    cfg.validate()?;
    Ok(cfg)
}
