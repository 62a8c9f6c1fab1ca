use thiserror::Error;

/// Errors raised while loading, validating or transforming datasets.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("row {row}: {feature}={value} out of domain {domain}")]
    OutOfDomain {
        row: usize,
        feature: String,
        value: f64,
        domain: String,
    },
    #[error("target missing at row {row}")]
    TargetMissing { row: usize },
    #[error("static feature {feature} missing at row {row}")]
    StaticMissing { row: usize, feature: String },
    #[error("static feature {feature} changes across visits of patient {patient}")]
    StaticNotConstant { patient: String, feature: String },
    #[error("duplicate visit (patient {patient}, t_days {t_days}) at row {row}")]
    DuplicateVisit { row: usize, patient: String, t_days: i64 },
    #[error("negative t_days {t_days} at row {row}")]
    NegativeTime { row: usize, t_days: i64 },
    #[error("empty complete-case subset")]
    EmptyCompleteCase,
    #[error("feature {0} is not maskable (only time-varying features can be masked)")]
    NotMaskable(String),
    #[error("unknown feature {0}")]
    UnknownFeature(String),
    #[error("mask rate {rate} for {feature} outside [0, 0.9]")]
    BadRate { feature: String, rate: f64 },
    #[error("feature {feature} has missing cells; masking needs a fully observed source")]
    NotFullyObserved { feature: String },
    #[error("masking {feature} keeps emptying a patient series after {attempts} draws")]
    MaskExhausted { feature: String, attempts: usize },
    #[error("need at least {needed} patients, found {found}")]
    TooFewPatients { needed: usize, found: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("train and test splits share patient {0}")]
    Overlap(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e.to_string())
    }
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        let row = e.position().map(|p| p.record() as usize).unwrap_or(0);
        DataError::MalformedRow {
            row,
            reason: e.to_string(),
        }
    }
}

/// Errors raised by metric functions.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {actual} actual vs {predicted} predicted")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("r2 undefined: actual values have zero variance")]
    ZeroVariance,
    #[error("r2 needs at least two values")]
    TooShort,
}

/// Errors raised by imputation methods.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImputeError {
    #[error("series has no observed values")]
    NoObserved,
    #[error("feature {feature}: {observed} observed rows, need {needed}")]
    InsufficientRows {
        feature: String,
        observed: usize,
        needed: usize,
    },
    #[error("singular design matrix while imputing {feature}")]
    Singular { feature: String },
    #[error("covariance not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("chain diverged (|value| > 1e6) at iteration {iteration}")]
    Divergent { iteration: usize },
    #[error("completed datasets disagree: {0}")]
    Mismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Errors raised by predictor fitting.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error("invalid hyperparameter: {0}")]
    Hyper(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Errors raised by the benchmark orchestration.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("method {method}: {source}")]
    Method { method: String, source: ImputeError },
    #[error("predictor {predictor}: {source}")]
    Predictor { predictor: String, source: PredictError },
    #[error("{0}")]
    Selection(String),
}
