//! Flag and config-file resolution. Every long flag has a snake_case key in
//! the TOML file; a flag given on the command line wins, and a boolean flag
//! can only switch its feature on.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use longimpute::benchmark::PairConfig;
use longimpute::data::{registry_rates, Mechanism};
use longimpute::impute::{ImputationMethod, METHOD_IDS};
use longimpute::predict::{parse_grid_overrides, PredictorKind};
use longimpute::synth::{CohortGenConfig, Trajectory};

use crate::{CliError, CohortFlags, Common, ImputeFlags, MaskFlags, PredictFlags};

/// Imputers scored by `bench-predict` when none are named.
pub const DEFAULT_IMPUTERS: [&str; 5] = ["linear", "ewma", "locf", "spline", "jm_clustered"];

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub manifest: Option<PathBuf>,
    pub patients: Option<usize>,
    pub trajectory: Option<String>,
    pub noise_sd: Option<f64>,
    pub edss_noise_sd: Option<f64>,
    pub mechanism: Option<String>,
    pub rates_file: Option<PathBuf>,
    pub use_target_in_imputation: Option<bool>,
    pub round_to_domain: Option<bool>,
    pub predictors: Option<Vec<String>>,
    pub grid_file: Option<PathBuf>,
    pub folds: Option<usize>,
    pub test_fraction: Option<f64>,
    pub n_final: Option<usize>,
    pub no_time: Option<bool>,
    pub imputers: Option<Vec<String>>,
    pub imputation_report: Option<PathBuf>,
    pub methods: Option<Vec<String>>,
    pub top: Option<usize>,
    pub method: Option<String>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub diagnostics: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(common: &Common) -> Result<Self, CliError> {
        let Some(path) = &common.config else {
            return Ok(FileConfig::default());
        };
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

pub fn pick<T>(flag: Option<T>, file: &Option<T>) -> Option<T>
where
    T: Clone,
{
    flag.or_else(|| file.clone())
}

pub fn require(path: Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    path.ok_or_else(|| CliError::Usage(format!("missing {what}")))
}

pub fn seed(common: &Common, file: &FileConfig) -> u64 {
    common.seed.or(file.seed).unwrap_or(0)
}

/// Sizes the global worker pool once per process.
pub fn init_jobs(common: &Common, file: &FileConfig) -> Result<(), CliError> {
    if let Some(n) = common.jobs.or(file.jobs) {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    }
    Ok(())
}

pub fn manifest_path(common: &Common, file: &FileConfig, beside: &Path, is_dir: bool) -> PathBuf {
    if let Some(p) = pick(common.manifest.clone(), &file.manifest) {
        return p;
    }
    let dir = if is_dir {
        beside.to_path_buf()
    } else {
        beside.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    dir.join("run_manifest.json")
}

pub fn mechanism(flags: &MaskFlags, file: &FileConfig) -> Result<Mechanism, CliError> {
    match pick(flags.mechanism.clone(), &file.mechanism) {
        None => Ok(Mechanism::Mcar),
        Some(s) => s
            .parse()
            .map_err(|e: longimpute::error::DataError| CliError::Usage(e.to_string())),
    }
}

pub fn rates(flags: &MaskFlags, file: &FileConfig) -> Result<BTreeMap<String, f64>, CliError> {
    let Some(path) = pick(flags.rates_file.clone(), &file.rates_file) else {
        return Ok(registry_rates());
    };
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("rates file {}: {e}", path.display())))
}

pub fn cohort(
    flags: &CohortFlags,
    file: &FileConfig,
    rates: BTreeMap<String, f64>,
    seed: u64,
) -> Result<CohortGenConfig, CliError> {
    let defaults = CohortGenConfig::default();
    let trajectory = match pick(flags.trajectory.clone(), &file.trajectory) {
        None => defaults.trajectory,
        Some(s) => s.parse::<Trajectory>().map_err(|e| CliError::Usage(e.to_string()))?,
    };
    let cfg = CohortGenConfig {
        n_patients: pick(flags.patients, &file.patients).unwrap_or(defaults.n_patients),
        trajectory,
        noise_sd: pick(flags.noise_sd, &file.noise_sd).unwrap_or(defaults.noise_sd),
        edss_noise_sd: pick(flags.edss_noise_sd, &file.edss_noise_sd).unwrap_or(defaults.edss_noise_sd),
        missing_rates: rates,
        seed,
        ..defaults
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn methods(ids: &[String]) -> Result<Vec<ImputationMethod>, CliError> {
    if ids.is_empty() {
        return Err(CliError::Usage("empty method list".into()));
    }
    ids.iter()
        .map(|id| {
            ImputationMethod::from_id(id.trim())
                .ok_or_else(|| CliError::Usage(format!("unknown method {id}; known: {}", METHOD_IDS.join(", "))))
        })
        .collect()
}

pub fn method_ids(flag: Option<Vec<String>>, file: &Option<Vec<String>>, default: &[&str]) -> Vec<String> {
    pick(flag, file).unwrap_or_else(|| default.iter().map(|s| s.to_string()).collect())
}

pub fn predictors(flags: &PredictFlags, file: &FileConfig) -> Result<Vec<PredictorKind>, CliError> {
    match pick(flags.predictors.clone(), &file.predictors) {
        None => Ok(PredictorKind::ALL.to_vec()),
        Some(ids) => ids
            .iter()
            .map(|id| {
                PredictorKind::from_id(id.trim())
                    .ok_or_else(|| CliError::Usage(format!("unknown predictor {id}; known: knn, rf, gbt, svr")))
            })
            .collect(),
    }
}

/// Pair-selection settings plus the test fraction and final-pair count.
pub struct PredictSettings {
    pub pair: PairConfig,
    pub predictors: Vec<PredictorKind>,
    pub test_fraction: f64,
    pub n_final: usize,
}

pub fn predict_settings(
    impute: &ImputeFlags,
    flags: &PredictFlags,
    file: &FileConfig,
) -> Result<PredictSettings, CliError> {
    let grids = match pick(flags.grid_file.clone(), &file.grid_file) {
        None => BTreeMap::new(),
        Some(path) => {
            let text = std::fs::read_to_string(&path)?;
            parse_grid_overrides(&text).map_err(|e| CliError::Usage(e.to_string()))?
        }
    };
    let k = pick(flags.folds, &file.folds).unwrap_or(10);
    if k < 2 {
        return Err(CliError::Usage(format!("--folds {k} < 2")));
    }
    let test_fraction = pick(flags.test_fraction, &file.test_fraction).unwrap_or(0.2);
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CliError::Usage(format!(
            "--test-fraction {test_fraction} outside (0, 1)"
        )));
    }
    let n_final = pick(flags.n_final, &file.n_final).unwrap_or(5);
    if n_final == 0 {
        return Err(CliError::Usage("--n-final must be >= 1".into()));
    }
    Ok(PredictSettings {
        pair: PairConfig {
            k,
            grids,
            use_target: use_target(impute, file),
            include_time: !(flags.no_time || file.no_time.unwrap_or(false)),
            round_to_domain: round_to_domain(impute, file),
        },
        predictors: predictors(flags, file)?,
        test_fraction,
        n_final,
    })
}

pub fn use_target(flags: &ImputeFlags, file: &FileConfig) -> bool {
    flags.use_target_in_imputation || file.use_target_in_imputation.unwrap_or(false)
}

pub fn round_to_domain(flags: &ImputeFlags, file: &FileConfig) -> bool {
    flags.round_to_domain || file.round_to_domain.unwrap_or(false)
}
