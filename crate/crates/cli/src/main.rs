//! `longimpute`: cohort generation, imputation and benchmark runs.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 method failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use longimpute::error::{BenchError, DataError, ImputeError, PredictError};

#[derive(Debug, Parser)]
#[command(
    name = "longimpute",
    version,
    about = "Longitudinal imputation and prediction benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a cohort, degraded by the missing rates, plus its truth.
    Generate(GenerateArgs),
    /// Complete a dataset with one imputation method.
    Impute(ImputeArgs),
    /// Mask the complete-case subset and score every imputation method.
    BenchImpute(BenchImputeArgs),
    /// Select imputer x predictor pairs by CV and score them on a test split.
    BenchPredict(BenchPredictArgs),
    /// Generate (unless given an input), then run both benchmarks.
    Full(FullArgs),
}

#[derive(Debug, Args, Default, Clone)]
pub struct Common {
    /// TOML file whose keys mirror the long flags; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; changes wall time only.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Manifest path; defaults to `run_manifest.json` beside the outputs.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Default, Clone)]
pub struct CohortFlags {
    #[arg(long)]
    pub patients: Option<usize>,
    /// piecewise_linear, random_walk or mvn_latent.
    #[arg(long)]
    pub trajectory: Option<String>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub edss_noise_sd: Option<f64>,
}

#[derive(Debug, Args, Default, Clone)]
pub struct MaskFlags {
    /// mcar or mar.
    #[arg(long)]
    pub mechanism: Option<String>,
    /// JSON object mapping time-varying features to missing rates.
    #[arg(long)]
    pub rates_file: Option<PathBuf>,
}

#[derive(Debug, Args, Default, Clone)]
pub struct ImputeFlags {
    /// Let EDSS act as an imputation predictor on training rows.
    #[arg(long)]
    pub use_target_in_imputation: bool,
    /// Snap completed values and predictions to the schema grid.
    #[arg(long)]
    pub round_to_domain: bool,
}

#[derive(Debug, Args, Default, Clone)]
pub struct PredictFlags {
    /// Comma-separated predictor ids (knn, rf, gbt, svr).
    #[arg(long, value_delimiter = ',')]
    pub predictors: Option<Vec<String>>,
    /// JSON grid overrides, e.g. `{"knn": {"k": [3, 5]}}`.
    #[arg(long)]
    pub grid_file: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Imputers evaluated on the test split, one best pair each.
    #[arg(long)]
    pub n_final: Option<usize>,
    /// Leave `t_days` out of the design matrix.
    #[arg(long)]
    pub no_time: bool,
}

#[derive(Debug, Args, Clone)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub cohort: CohortFlags,
    #[command(flatten)]
    pub mask: MaskFlags,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Also write the fully observed cohort here.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub impute: ImputeFlags,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Joint-model methods only: per-iteration sampler trace as CSV.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct BenchImputeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub mask: MaskFlags,
    #[command(flatten)]
    pub impute: ImputeFlags,
    /// Comma-separated method ids; all fourteen by default.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct BenchPredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub impute: ImputeFlags,
    #[command(flatten)]
    pub predict: PredictFlags,
    /// Comma-separated imputer ids.
    #[arg(long, value_delimiter = ',', conflicts_with = "imputation_report")]
    pub imputers: Option<Vec<String>>,
    /// Take the top imputers of a previous `imputation_report.csv`.
    #[arg(long)]
    pub imputation_report: Option<PathBuf>,
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct FullArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub cohort: CohortFlags,
    #[command(flatten)]
    pub mask: MaskFlags,
    #[command(flatten)]
    pub impute: ImputeFlags,
    #[command(flatten)]
    pub predict: PredictFlags,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Number of top imputers carried into pair selection.
    #[arg(long)]
    pub top: Option<usize>,
    /// Use this incomplete dataset instead of generating one.
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Method(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Method(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Method(m) => write!(f, "method failure: {m}"),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ImputeError> for CliError {
    fn from(e: ImputeError) -> Self {
        match e {
            ImputeError::Data(d) => d.into(),
            other => CliError::Method(other.to_string()),
        }
    }
}

impl From<PredictError> for CliError {
    fn from(e: PredictError) -> Self {
        CliError::Method(e.to_string())
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Data(d) => d.into(),
            other => CliError::Method(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Impute(a) => commands::impute(a),
        Command::BenchImpute(a) => commands::bench_impute(a),
        Command::BenchPredict(a) => commands::bench_predict(a),
        Command::Full(a) => commands::full(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("longimpute: {e}");
            ExitCode::from(e.code())
        }
    }
}
