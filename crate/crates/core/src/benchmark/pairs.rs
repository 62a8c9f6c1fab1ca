//! Imputer x predictor selection and held-out evaluation.
//!
//! Leakage guard: the training portion is always imputed on its own, and
//! held-out rows are imputed through `train ∪ held-out` with the target
//! withheld, so no held-out EDSS value reaches any fitted model.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{kfold_by_patient, split_by_patient, LongitudinalDataset, SplitAssignment, EDSS_DOMAIN};
use crate::error::{BenchError, DataError, PredictError};
use crate::impute::{ImputeOptions, Imputer};
use crate::metrics::r2_of;
use crate::predict::{
    default_axes, expand_grid, fit_predict_grid, FeatureMatrix, GridAxes, PredictorKind, PredictorSpec, Standardizer,
};
use crate::rng::derive_seed;

/// Folds with a failure beyond this count exclude a pair from the ranking.
pub const MAX_FAILED_FOLDS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct PairConfig {
    pub k: usize,
    /// Per-kind axis overrides merged over the default axes.
    pub grids: BTreeMap<PredictorKind, GridAxes>,
    /// Whether EDSS may serve as an imputation predictor on training rows.
    pub use_target: bool,
    pub include_time: bool,
    /// Snap completed datasets and predictions to the schema grid.
    pub round_to_domain: bool,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            k: 10,
            grids: BTreeMap::new(),
            use_target: false,
            include_time: true,
            round_to_domain: false,
        }
    }
}

impl PairConfig {
    pub fn grid(&self, kind: PredictorKind, n_features: usize, seed: u64) -> Result<Vec<PredictorSpec>, PredictError> {
        let mut axes = default_axes(kind, n_features);
        if let Some(o) = self.grids.get(&kind) {
            axes.extend(o.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
        expand_grid(kind, &axes, predictor_seed(seed, kind))
    }
}

fn predictor_seed(seed: u64, kind: PredictorKind) -> u64 {
    derive_seed(seed, &format!("predict/{}", kind.id()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub imputer: String,
    pub predictor: String,
    pub best_hyperparameters: BTreeMap<String, f64>,
    pub hyperparameters_json: String,
    /// Mean of `fold_scores`.
    pub mean_r2_cv: f64,
    /// Sample standard deviation of `fold_scores`; 0 for a single fold.
    pub std_r2_cv: f64,
    /// Validation R² of the chosen grid point on each successful fold.
    pub fold_scores: Vec<f64>,
    pub failed_folds: Vec<usize>,
    pub r2_test: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedPair {
    pub imputer: String,
    pub predictor: String,
    pub failed_folds: Vec<usize>,
    /// First failure, for the report.
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSelection {
    /// Descending by `mean_r2_cv`, ties by imputer then predictor id.
    pub ranked: Vec<PairResult>,
    pub excluded: Vec<ExcludedPair>,
}

/// Standardized design matrices ready for fitting and scoring.
struct Prepared {
    train: FeatureMatrix,
    eval: FeatureMatrix,
}

fn impute(
    imputer: &dyn Imputer,
    d: &LongitudinalDataset,
    seed: u64,
    use_target: bool,
    round: bool,
) -> Result<LongitudinalDataset, BenchError> {
    let done = imputer
        .impute(d, &ImputeOptions { seed, use_target })
        .map_err(|source| BenchError::Method {
            method: imputer.id(),
            source,
        })?;
    Ok(if round {
        done.dataset.rounded_to_domain()
    } else {
        done.dataset
    })
}

fn design(d: &LongitudinalDataset, include_time: bool) -> Result<FeatureMatrix, BenchError> {
    FeatureMatrix::from_dataset(d, include_time).map_err(|source| BenchError::Predictor {
        predictor: "design".into(),
        source,
    })
}

fn check_disjoint(train: &BTreeSet<String>, held_out: &BTreeSet<String>) -> Result<(), BenchError> {
    match train.intersection(held_out).next() {
        Some(p) => Err(DataError::Overlap(p.clone()).into()),
        None => Ok(()),
    }
}

/// Imputes `train` alone and `held_out` through the union, then builds
/// design matrices standardized on the training rows.
fn prepare(
    imputer: &dyn Imputer,
    train: &LongitudinalDataset,
    held_out: &LongitudinalDataset,
    cfg: &PairConfig,
    seed: u64,
    key: &str,
) -> Result<Prepared, BenchError> {
    let id = imputer.id();
    let train_done = impute(
        imputer,
        train,
        derive_seed(seed, &format!("{key}/train/{id}")),
        cfg.use_target,
        cfg.round_to_domain,
    )?;
    let union = train.concat(held_out)?;
    let union_done = impute(
        imputer,
        &union,
        derive_seed(seed, &format!("{key}/held-out/{id}")),
        false,
        cfg.round_to_domain,
    )?;
    let eval_done = union_done.subset(&held_out.patient_ids());
    let train_m = design(&train_done, cfg.include_time)?;
    let eval_m = design(&eval_done, cfg.include_time)?;
    let train_patients: BTreeSet<String> = train_m.patients.iter().cloned().collect();
    let eval_patients: BTreeSet<String> = eval_m.patients.iter().cloned().collect();
    check_disjoint(&train_patients, &eval_patients)?;
    let std = Standardizer::fit(&train_m);
    Ok(Prepared {
        train: std.apply(&train_m),
        eval: std.apply(&eval_m),
    })
}

fn score(actual: &[f64], mut predicted: Vec<f64>, round: bool) -> Result<f64, PredictError> {
    if round {
        for v in &mut predicted {
            *v = EDSS_DOMAIN.snap(*v);
        }
    }
    Ok(r2_of(actual, &predicted)?)
}

/// Per predictor kind, the validation R² of every grid point, or the first
/// failure.
type FoldOutcome = Vec<Result<Vec<f64>, String>>;

fn run_fold(
    imputer: &dyn Imputer,
    train: &LongitudinalDataset,
    val: &LongitudinalDataset,
    predictors: &[PredictorKind],
    cfg: &PairConfig,
    seed: u64,
    fold: usize,
) -> FoldOutcome {
    let prepared = match prepare(imputer, train, val, cfg, seed, &format!("cv/{fold}")) {
        Ok(p) => p,
        Err(e) => return vec![Err(e.to_string()); predictors.len()],
    };
    predictors
        .iter()
        .map(|&kind| {
            let grid = cfg
                .grid(kind, n_features(train, cfg), seed)
                .map_err(|e| e.to_string())?;
            fit_predict_grid(&grid, &prepared.train, &prepared.eval.x)
                .into_iter()
                .map(|p| p.and_then(|pred| score(&prepared.eval.y, pred, cfg.round_to_domain)))
                .collect::<Result<Vec<f64>, PredictError>>()
                .map_err(|e| format!("{}: {e}", kind.id()))
        })
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Scores every (imputer, predictor, grid point) on patient-grouped folds
/// of `d` and keeps, per pair, the grid point of highest mean fold R²
/// (first in grid order on ties). A pair with more than
/// [`MAX_FAILED_FOLDS`] failed folds is excluded.
pub fn run_pair_selection(
    d: &LongitudinalDataset,
    imputers: &[&dyn Imputer],
    predictors: &[PredictorKind],
    cfg: &PairConfig,
    seed: u64,
) -> Result<PairSelection, BenchError> {
    if imputers.is_empty() || predictors.is_empty() {
        return Err(BenchError::Selection(
            "need at least one imputer and one predictor".into(),
        ));
    }
    let folds = kfold_by_patient(d, cfg.k, derive_seed(seed, "folds"))?;
    let splits: Vec<(LongitudinalDataset, LongitudinalDataset)> = (0..cfg.k)
        .map(|f| {
            let s = folds.split_for(f);
            s.check_disjoint()?;
            Ok(s.apply(d))
        })
        .collect::<Result<_, DataError>>()?;
    let jobs: Vec<(usize, usize)> = (0..imputers.len())
        .flat_map(|i| (0..cfg.k).map(move |f| (i, f)))
        .collect();
    let outcomes: Vec<FoldOutcome> = jobs
        .par_iter()
        .map(|&(i, f)| run_fold(imputers[i], &splits[f].0, &splits[f].1, predictors, cfg, seed, f))
        .collect();

    let mut ranked = Vec::new();
    let mut excluded = Vec::new();
    for (i, imputer) in imputers.iter().enumerate() {
        for (j, kind) in predictors.iter().enumerate() {
            let per_fold: Vec<&Result<Vec<f64>, String>> = (0..cfg.k).map(|f| &outcomes[i * cfg.k + f][j]).collect();
            let failed: Vec<usize> = (0..cfg.k).filter(|&f| per_fold[f].is_err()).collect();
            let ok: Vec<&Vec<f64>> = per_fold.iter().filter_map(|r| r.as_ref().ok()).collect();
            if failed.len() > MAX_FAILED_FOLDS || ok.is_empty() {
                let error = per_fold
                    .iter()
                    .find_map(|r| r.as_ref().err())
                    .cloned()
                    .unwrap_or_default();
                excluded.push(ExcludedPair {
                    imputer: imputer.id(),
                    predictor: kind.id().into(),
                    failed_folds: failed,
                    error,
                });
                continue;
            }
            let n_points = ok[0].len();
            let mut best = 0;
            let mut best_mean = f64::NEG_INFINITY;
            for g in 0..n_points {
                let scores: Vec<f64> = ok.iter().map(|s| s[g]).collect();
                let (m, _) = mean_std(&scores);
                if m > best_mean {
                    best = g;
                    best_mean = m;
                }
            }
            let fold_scores: Vec<f64> = ok.iter().map(|s| s[best]).collect();
            let (mean_r2_cv, std_r2_cv) = mean_std(&fold_scores);
            let spec = cfg
                .grid(*kind, n_features(d, cfg), seed)
                .map_err(|source| BenchError::Predictor {
                    predictor: kind.id().into(),
                    source,
                })?
                .swap_remove(best);
            ranked.push(PairResult {
                imputer: imputer.id(),
                predictor: kind.id().into(),
                hyperparameters_json: spec.hyperparameters_json(),
                best_hyperparameters: spec.hyperparameters,
                mean_r2_cv,
                std_r2_cv,
                fold_scores,
                failed_folds: failed,
                r2_test: None,
            });
        }
    }
    ranked.sort_by(|a, b| {
        b.mean_r2_cv
            .total_cmp(&a.mean_r2_cv)
            .then_with(|| a.imputer.cmp(&b.imputer))
            .then_with(|| a.predictor.cmp(&b.predictor))
    });
    Ok(PairSelection { ranked, excluded })
}

/// Design-matrix width for `d`'s schema: every non-target feature plus
/// the optional time column.
fn n_features(d: &LongitudinalDataset, cfg: &PairConfig) -> usize {
    d.schema().len() - 1 + usize::from(cfg.include_time)
}

/// Takes the best pair of each of the first `n_final` distinct imputers in
/// `ranked`, refits it on the imputed training split and scores the test
/// split.
pub fn run_test_evaluation(
    train: &LongitudinalDataset,
    test: &LongitudinalDataset,
    ranked: &[PairResult],
    imputers: &[&dyn Imputer],
    n_final: usize,
    cfg: &PairConfig,
    seed: u64,
) -> Result<Vec<PairResult>, BenchError> {
    if test.n_patients() == 0 {
        return Err(DataError::TooFewPatients { needed: 1, found: 0 }.into());
    }
    check_disjoint(&train.patient_ids(), &test.patient_ids())?;
    if ranked.is_empty() {
        return Err(BenchError::Selection("no ranked pairs to evaluate".into()));
    }
    let mut chosen: Vec<&PairResult> = Vec::new();
    for r in ranked {
        if chosen.len() == n_final {
            break;
        }
        if chosen.iter().all(|c| c.imputer != r.imputer) {
            chosen.push(r);
        }
    }
    chosen
        .par_iter()
        .map(|pair| {
            let imputer = imputers
                .iter()
                .find(|m| m.id() == pair.imputer)
                .ok_or_else(|| BenchError::Selection(format!("imputer {} not supplied", pair.imputer)))?;
            let kind = PredictorKind::from_id(&pair.predictor)
                .ok_or_else(|| BenchError::Selection(format!("unknown predictor {}", pair.predictor)))?;
            let predictor_err = |source| BenchError::Predictor {
                predictor: pair.predictor.clone(),
                source,
            };
            let spec = PredictorSpec::new(kind, &pair.best_hyperparameters, predictor_seed(seed, kind))
                .map_err(predictor_err)?;
            let prepared = prepare(*imputer, train, test, cfg, seed, "test")?;
            let model = spec.fit(&prepared.train).map_err(predictor_err)?;
            let r2 =
                score(&prepared.eval.y, model.predict(&prepared.eval.x), cfg.round_to_domain).map_err(predictor_err)?;
            Ok(PairResult {
                r2_test: Some(r2),
                ..(*pair).clone()
            })
        })
        .collect()
}

/// Copies the test scores of `evaluated` onto the matching rows of `ranked`.
pub fn attach_test_scores(ranked: &mut [PairResult], evaluated: &[PairResult]) {
    for r in ranked.iter_mut() {
        if let Some(e) = evaluated
            .iter()
            .find(|e| e.imputer == r.imputer && e.predictor == r.predictor)
        {
            r.r2_test = e.r2_test;
        }
    }
}

/// Outcome of the whole prediction experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBenchmark {
    pub split: SplitAssignment,
    pub selection: PairSelection,
    /// The ranked rows with test scores attached to the evaluated pairs.
    pub rows: Vec<PairResult>,
}

/// Splits `d` by patient, selects pairs on the training part and evaluates
/// the best pair of the top `n_final` imputers on the test part.
pub fn run_prediction_benchmark(
    d: &LongitudinalDataset,
    imputers: &[&dyn Imputer],
    predictors: &[PredictorKind],
    cfg: &PairConfig,
    test_fraction: f64,
    n_final: usize,
    seed: u64,
) -> Result<PredictionBenchmark, BenchError> {
    let split = split_by_patient(d, test_fraction, derive_seed(seed, "split"))?;
    split.check_disjoint()?;
    let (train, test) = split.apply(d);
    let selection = run_pair_selection(&train, imputers, predictors, cfg, seed)?;
    let evaluated = run_test_evaluation(&train, &test, &selection.ranked, imputers, n_final, cfg, seed)?;
    let mut rows = selection.ranked.clone();
    attach_test_scores(&mut rows, &evaluated);
    Ok(PredictionBenchmark { split, selection, rows })
}
