//! The two experiments: mask-and-score comparison of imputation methods,
//! and imputer x predictor selection by patient-grouped cross-validation
//! followed by held-out test evaluation.
//!
//! Every job draws its randomness from `(master seed, job key)`, so outputs
//! do not depend on the worker count.

mod pairs;
mod report;

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{apply_mask, complete_case_subset, LongitudinalDataset, MaskPlan, Mechanism};
use crate::error::{BenchError, DataError};
use crate::impute::{ImputeOptions, Imputer};
use crate::rng::derive_seed;

pub use pairs::{
    attach_test_scores, run_pair_selection, run_prediction_benchmark, run_test_evaluation, ExcludedPair, PairConfig,
    PairResult, PairSelection, PredictionBenchmark, MAX_FAILED_FOLDS,
};
pub use report::{
    read_imputation_report, write_imputation_report, write_per_feature_report, write_prediction_report, RunManifest,
    StageTiming,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationReportRow {
    pub method: String,
    pub rmse: f64,
    pub n_masked: usize,
    pub runtime_ms: u64,
    /// RMSE over the masked cells of each feature.
    pub per_feature_rmse: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFailure {
    pub method: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationBenchmark {
    /// Ascending by RMSE, ties by method id.
    pub rows: Vec<ImputationReportRow>,
    pub failures: Vec<MethodFailure>,
    pub plan: MaskPlan,
    /// Records in the complete-case subset that was masked.
    pub complete_case_records: usize,
}

/// Patients with fewer complete-case records than this are left out of
/// the masking benchmark: masking their few records would often empty a
/// series, and the uniform draw would rarely avoid all of them.
pub const MIN_COMPLETE_RECORDS: usize = 3;

/// The complete-case records of patients with at least
/// [`MIN_COMPLETE_RECORDS`] of them.
pub fn maskable_subset(d: &LongitudinalDataset) -> Result<LongitudinalDataset, BenchError> {
    let cc = complete_case_subset(d)?;
    let keep: std::collections::BTreeSet<String> = cc
        .patients()
        .iter()
        .filter(|s| s.rows.len() >= MIN_COMPLETE_RECORDS)
        .map(|s| s.patient_id.clone())
        .collect();
    if keep.is_empty() {
        return Err(DataError::EmptyCompleteCase.into());
    }
    Ok(cc.subset(&keep))
}

/// Scores `completed` against the ground truth of `plan`, pooled and per
/// feature.
pub fn score_plan(plan: &MaskPlan, value: impl Fn(usize, usize) -> f64) -> (f64, BTreeMap<String, f64>) {
    let mut total = 0.0;
    let mut by_feature: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for c in &plan.cells {
        let e = value(c.row, c.feature_index) - c.true_value;
        total += e * e;
        let slot = by_feature.entry(c.feature.clone()).or_default();
        slot.0 += e * e;
        slot.1 += 1;
    }
    let pooled = (total / plan.len().max(1) as f64).sqrt();
    let per = by_feature
        .into_iter()
        .map(|(f, (s, n))| (f, (s / n as f64).sqrt()))
        .collect();
    (pooled, per)
}

/// Masks the [`maskable_subset`] of `d` at `rates`, runs every method on
/// the masked data and scores the masked cells. A failing method is
/// reported in `failures`; the others still run.
pub fn run_imputation_benchmark(
    d: &LongitudinalDataset,
    methods: &[&dyn Imputer],
    rates: &BTreeMap<String, f64>,
    mechanism: Mechanism,
    use_target: bool,
    seed: u64,
) -> Result<ImputationBenchmark, BenchError> {
    if methods.is_empty() {
        return Err(BenchError::Selection("no imputation methods given".into()));
    }
    let cc = maskable_subset(d)?;
    let (masked, plan) = apply_mask(&cc, rates, mechanism, derive_seed(seed, "mask"))?;
    let outcomes: Vec<Result<ImputationReportRow, MethodFailure>> = methods
        .par_iter()
        .map(|m| {
            let id = m.id();
            let opts = ImputeOptions {
                seed: derive_seed(seed, &format!("impute/{id}")),
                use_target,
            };
            let start = Instant::now();
            let done = m.impute(&masked, &opts).map_err(|e| MethodFailure {
                method: id.clone(),
                error: e.to_string(),
            })?;
            let runtime_ms = start.elapsed().as_millis() as u64;
            let (rmse, per_feature_rmse) = score_plan(&plan, |r, f| done.value(r, f));
            Ok(ImputationReportRow {
                method: id,
                rmse,
                n_masked: plan.len(),
                runtime_ms,
                per_feature_rmse,
            })
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(f) => failures.push(f),
        }
    }
    rows.sort_by(|a, b| a.rmse.total_cmp(&b.rmse).then_with(|| a.method.cmp(&b.method)));
    Ok(ImputationBenchmark {
        rows,
        failures,
        plan,
        complete_case_records: cc.len(),
    })
}

/// The `n` lowest-RMSE methods; exact RMSE ties go to the faster method,
/// then the lexically smaller id.
pub fn select_top_imputers(rows: &[ImputationReportRow], n: usize) -> Result<Vec<String>, BenchError> {
    if rows.len() < n {
        return Err(BenchError::Selection(format!(
            "need {n} scored methods, have {}",
            rows.len()
        )));
    }
    let mut sorted: Vec<&ImputationReportRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.rmse
            .total_cmp(&b.rmse)
            .then(a.runtime_ms.cmp(&b.runtime_ms))
            .then_with(|| a.method.cmp(&b.method))
    });
    Ok(sorted[..n].iter().map(|r| r.method.clone()).collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::registry_rates;
    use crate::error::ImputeError;
    use crate::impute::{CompletedDataset, ImputationMethod, Provenance};
    use crate::synth::{generate_cohort, CohortGenConfig, Trajectory};

    /// Copies ground truth into every missing cell, matched by
    /// `(patient, t_days)`.
    pub(crate) struct OracleImputer {
        pub truth: LongitudinalDataset,
    }

    impl Imputer for OracleImputer {
        fn id(&self) -> String {
            "oracle".into()
        }

        fn impute(&self, d: &LongitudinalDataset, opts: &ImputeOptions) -> Result<CompletedDataset, ImputeError> {
            let index: BTreeMap<(&str, i64), usize> = self
                .truth
                .records()
                .iter()
                .enumerate()
                .map(|(i, r)| ((r.patient_id.as_str(), r.t_days), i))
                .collect();
            let prov = Provenance {
                method: self.id(),
                imputation_index: 0,
                seed: opts.seed,
                m: 1,
            };
            Ok(CompletedDataset::fill(
                d,
                |r, f| {
                    let rec = &d.records()[r];
                    let t = index[&(rec.patient_id.as_str(), rec.t_days)];
                    self.truth.cell(t, f).expect("truth is complete")
                },
                prov,
            ))
        }
    }

    /// Fills every missing cell with the feature's observed mean.
    pub(crate) struct MeanImputer;

    impl Imputer for MeanImputer {
        fn id(&self) -> String {
            "mean".into()
        }

        fn impute(&self, d: &LongitudinalDataset, opts: &ImputeOptions) -> Result<CompletedDataset, ImputeError> {
            let means: Vec<f64> = (0..d.schema().len())
                .map(|f| {
                    let v = d.observed_values(f);
                    v.iter().sum::<f64>() / v.len().max(1) as f64
                })
                .collect();
            let prov = Provenance {
                method: self.id(),
                imputation_index: 0,
                seed: opts.seed,
                m: 1,
            };
            Ok(CompletedDataset::fill(d, |_, f| means[f], prov))
        }
    }

    /// Always fails.
    struct BrokenImputer;

    impl Imputer for BrokenImputer {
        fn id(&self) -> String {
            "broken".into()
        }

        fn impute(&self, _: &LongitudinalDataset, _: &ImputeOptions) -> Result<CompletedDataset, ImputeError> {
            Err(ImputeError::Config("always fails".into()))
        }
    }

    pub(crate) fn cohort(n_patients: usize, trajectory: Trajectory, seed: u64) -> LongitudinalDataset {
        generate_cohort(&CohortGenConfig {
            n_patients,
            trajectory,
            seed,
            ..CohortGenConfig::default()
        })
        .unwrap()
        .0
    }

    #[test]
    fn oracle_ranks_first_and_failures_are_isolated() {
        for seed in 0..3 {
            let d = cohort(30, Trajectory::RandomWalk, seed);
            let oracle = OracleImputer { truth: d.clone() };
            let linear = ImputationMethod::from_id("linear").unwrap();
            let locf = ImputationMethod::from_id("locf").unwrap();
            let methods: Vec<&dyn Imputer> = vec![&linear, &BrokenImputer, &oracle, &locf];
            let b = run_imputation_benchmark(&d, &methods, &registry_rates(), Mechanism::Mcar, false, seed).unwrap();
            assert_eq!(b.rows[0].method, "oracle");
            assert_eq!(b.rows[0].rmse, 0.0);
            assert_eq!(b.rows.len(), 3);
            assert_eq!(b.failures.len(), 1);
            assert_eq!(b.failures[0].method, "broken");
            assert!(b.rows.iter().all(|r| r.n_masked == b.plan.len() && r.n_masked > 0));
        }
    }

    #[test]
    fn linear_beats_mean_on_piecewise_linear_cohort() {
        let d = cohort(40, Trajectory::PiecewiseLinear, 5);
        let linear = ImputationMethod::from_id("linear").unwrap();
        let methods: Vec<&dyn Imputer> = vec![&MeanImputer, &linear];
        let b = run_imputation_benchmark(&d, &methods, &registry_rates(), Mechanism::Mcar, false, 1).unwrap();
        assert_eq!(b.rows[0].method, "linear");
        assert!(b.rows[0].rmse < b.rows[1].rmse);
    }

    #[test]
    fn per_feature_rmse_pools_to_overall() {
        let d = cohort(30, Trajectory::RandomWalk, 2);
        let locf = ImputationMethod::from_id("locf").unwrap();
        let b = run_imputation_benchmark(&d, &[&locf], &registry_rates(), Mechanism::Mcar, false, 0).unwrap();
        let row = &b.rows[0];
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for c in &b.plan.cells {
            *counts.entry(c.feature.as_str()).or_default() += 1;
        }
        let pooled: f64 = row
            .per_feature_rmse
            .iter()
            .map(|(f, r)| r * r * counts[f.as_str()] as f64)
            .sum::<f64>()
            / b.plan.len() as f64;
        assert!((pooled.sqrt() - row.rmse).abs() < 1e-12);
    }

    fn row(method: &str, rmse: f64, runtime_ms: u64) -> ImputationReportRow {
        ImputationReportRow {
            method: method.into(),
            rmse,
            n_masked: 10,
            runtime_ms,
            per_feature_rmse: BTreeMap::new(),
        }
    }

    #[test]
    fn top_selection_and_tie_breaks() {
        let rmses = [0.62, 0.47, 0.57, 0.48, 0.60, 0.55, 0.71];
        let rows: Vec<_> = rmses
            .iter()
            .enumerate()
            .map(|(i, &r)| row(&format!("m{i}"), r, 5))
            .collect();
        assert_eq!(
            select_top_imputers(&rows, 5).unwrap(),
            vec!["m1", "m3", "m5", "m2", "m4"]
        );
        assert_eq!(select_top_imputers(&rows, 1).unwrap(), vec!["m1"]);
        assert!(select_top_imputers(&rows, 8).is_err());
        let tied = vec![row("slow", 0.5, 90), row("fast", 0.5, 10), row("b", 0.5, 10)];
        assert_eq!(select_top_imputers(&tied, 3).unwrap(), vec!["b", "fast", "slow"]);
    }

    #[test]
    fn default_methods_give_fourteen_timed_rows() {
        let d = cohort(25, Trajectory::PiecewiseLinear, 8);
        let all = ImputationMethod::all_defaults();
        let methods: Vec<&dyn Imputer> = all.iter().map(|m| m as &dyn Imputer).collect();
        let b = run_imputation_benchmark(&d, &methods, &registry_rates(), Mechanism::Mcar, false, 0).unwrap();
        assert!(b.failures.is_empty(), "{:?}", b.failures);
        assert_eq!(b.rows.len(), 14);
        assert!(b.rows.iter().all(|r| r.rmse.is_finite() && r.rmse >= 0.0));
        assert!(b.rows.windows(2).all(|w| w[0].rmse <= w[1].rmse));
    }

    #[test]
    fn maskable_subset_drops_short_complete_case_series() {
        let d = cohort(60, Trajectory::PiecewiseLinear, 3);
        let degraded = crate::synth::degrade(&d, &registry_rates(), Mechanism::Mcar, 4)
            .unwrap()
            .0;
        let cc = complete_case_subset(&degraded).unwrap();
        let m = maskable_subset(&degraded).unwrap();
        assert!(m.is_complete());
        assert!(m.patients().iter().all(|s| s.rows.len() >= MIN_COMPLETE_RECORDS));
        let dropped: usize = cc
            .patients()
            .iter()
            .filter(|s| s.rows.len() < MIN_COMPLETE_RECORDS)
            .map(|s| s.rows.len())
            .sum();
        assert_eq!(m.len() + dropped, cc.len());
        let methods = ImputationMethod::from_id("linear").unwrap();
        run_imputation_benchmark(&degraded, &[&methods], &registry_rates(), Mechanism::Mcar, false, 0).unwrap();
    }

    #[test]
    fn empty_method_list_is_rejected() {
        let d = cohort(5, Trajectory::RandomWalk, 0);
        assert!(run_imputation_benchmark(&d, &[], &registry_rates(), Mechanism::Mcar, false, 0).is_err());
    }
}
