//! Imputation methods and the common completed-dataset contract.

pub mod chained;
pub mod joint;
pub mod kernels;
pub mod single;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureKind, LongitudinalDataset};
use crate::error::ImputeError;

pub use chained::{fcs_impute, fcs_impute_traced, FcsConfig, FcsKernel};
pub use joint::{
    conditional_normal, jm_impute, jm_impute_with_diagnostics, run_gibbs, run_gibbs_observed, JmConfig, JmDiagnostics,
    JmLevel, JmProblem, JmState,
};
pub use single::{impute_ewma, impute_linear, impute_locf, impute_spline, EwmaWeighting, SeriesView};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub imputation_index: usize,
    pub seed: u64,
    /// Number of imputations pooled into this dataset.
    pub m: usize,
}

/// A dataset with every cell filled, plus the positions that were filled.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedDataset {
    pub dataset: LongitudinalDataset,
    /// `(row, feature)` cells missing in the source, in row-major order.
    pub imputed_cells: Vec<(usize, usize)>,
    pub provenance: Provenance,
}

impl CompletedDataset {
    /// Fills `source` at its missing cells; `value(row, feature)` supplies
    /// each draw.
    pub(crate) fn fill(
        source: &LongitudinalDataset,
        mut value: impl FnMut(usize, usize) -> f64,
        provenance: Provenance,
    ) -> Self {
        let cells = missing_cells(source);
        let mut dataset = source.clone();
        for &(r, f) in &cells {
            dataset.set_cell(r, f, Some(value(r, f)));
        }
        CompletedDataset {
            dataset,
            imputed_cells: cells,
            provenance,
        }
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.dataset
            .cell(row, feature)
            .expect("completed dataset has no missing cells")
    }
}

pub(crate) fn missing_cells(d: &LongitudinalDataset) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (r, rec) in d.records().iter().enumerate() {
        for (f, c) in rec.values.iter().enumerate() {
            if c.is_none() {
                out.push((r, f));
            }
        }
    }
    out
}

/// Cell-wise mean over `m` completed versions of one source.
pub fn pool_mean(completed: &[CompletedDataset]) -> Result<CompletedDataset, ImputeError> {
    let first = completed
        .first()
        .ok_or_else(|| ImputeError::Mismatch("no imputations to pool".into()))?;
    let m = completed.len();
    if m == 1 {
        let mut out = first.clone();
        out.provenance.m = 1;
        return Ok(out);
    }
    for c in &completed[1..] {
        if c.dataset.schema() != first.dataset.schema() || c.dataset.len() != first.dataset.len() {
            return Err(ImputeError::Mismatch("schemas or row counts differ".into()));
        }
        if c.imputed_cells != first.imputed_cells {
            return Err(ImputeError::Mismatch("imputed cell sets differ".into()));
        }
    }
    let mut is_imputed = vec![false; first.dataset.len() * first.dataset.schema().len()];
    let width = first.dataset.schema().len();
    for &(r, f) in &first.imputed_cells {
        is_imputed[r * width + f] = true;
    }
    for c in &completed[1..] {
        for (r, (a, b)) in first.dataset.records().iter().zip(c.dataset.records()).enumerate() {
            if a.patient_id != b.patient_id || a.t_days != b.t_days {
                return Err(ImputeError::Mismatch(format!("record {r} differs")));
            }
            for f in 0..width {
                if !is_imputed[r * width + f] && a.values[f] != b.values[f] {
                    return Err(ImputeError::Mismatch(format!("observed cell ({r}, {f}) differs")));
                }
            }
        }
    }
    let mut dataset = first.dataset.clone();
    for &(r, f) in &first.imputed_cells {
        let mean = completed.iter().map(|c| c.value(r, f)).sum::<f64>() / m as f64;
        dataset.set_cell(r, f, Some(mean));
    }
    Ok(CompletedDataset {
        dataset,
        imputed_cells: first.imputed_cells.clone(),
        provenance: Provenance {
            m,
            imputation_index: 0,
            ..first.provenance.clone()
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ImputeOptions {
    pub seed: u64,
    /// Whether EDSS may serve as a predictor of the features.
    pub use_target: bool,
}

/// A method producing one completed dataset.
pub trait Imputer: Send + Sync {
    fn id(&self) -> String;
    fn impute(&self, d: &LongitudinalDataset, opts: &ImputeOptions) -> Result<CompletedDataset, ImputeError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesMethod {
    Linear,
    Spline,
    Locf,
    Ewma,
}

/// The benchmarked imputation methods with their configurations.
#[derive(Debug, Clone, PartialEq)]
pub enum ImputationMethod {
    Series {
        method: SeriesMethod,
        ewma_k: usize,
        ewma_weighting: EwmaWeighting,
    },
    Chained(FcsConfig),
    Joint(JmConfig),
}

pub const METHOD_IDS: [&str; 14] = [
    "linear",
    "spline",
    "locf",
    "ewma",
    "pmm",
    "cart",
    "rf",
    "blg",
    "lg",
    "lgp",
    "lgnob",
    "jm_clustered",
    "jm_single",
    "jm_lg",
];

impl ImputationMethod {
    pub fn series(method: SeriesMethod) -> Self {
        ImputationMethod::Series {
            method,
            ewma_k: 4,
            ewma_weighting: EwmaWeighting::Index,
        }
    }

    /// Default configuration for a method id.
    pub fn from_id(id: &str) -> Option<Self> {
        Some(match id {
            "linear" => Self::series(SeriesMethod::Linear),
            "spline" => Self::series(SeriesMethod::Spline),
            "locf" => Self::series(SeriesMethod::Locf),
            "ewma" => Self::series(SeriesMethod::Ewma),
            "jm_clustered" => Self::Joint(JmConfig::new(JmLevel::Clustered)),
            "jm_single" => Self::Joint(JmConfig::new(JmLevel::Single)),
            "jm_lg" => Self::Joint(JmConfig::new(JmLevel::Lg)),
            other => Self::Chained(FcsConfig::new(FcsKernel::from_id(other)?)),
        })
    }

    /// All fourteen methods at their defaults, in a fixed order.
    pub fn all_defaults() -> Vec<Self> {
        METHOD_IDS
            .iter()
            .map(|id| Self::from_id(id).expect("known id"))
            .collect()
    }
}

impl Imputer for ImputationMethod {
    fn id(&self) -> String {
        match self {
            ImputationMethod::Series { method, .. } => match method {
                SeriesMethod::Linear => "linear",
                SeriesMethod::Spline => "spline",
                SeriesMethod::Locf => "locf",
                SeriesMethod::Ewma => "ewma",
            }
            .to_string(),
            ImputationMethod::Chained(cfg) => cfg.kernel.id().to_string(),
            ImputationMethod::Joint(cfg) => cfg.level.id().to_string(),
        }
    }

    fn impute(&self, d: &LongitudinalDataset, opts: &ImputeOptions) -> Result<CompletedDataset, ImputeError> {
        match self {
            ImputationMethod::Series {
                method,
                ewma_k,
                ewma_weighting,
            } => impute_series_dataset(d, *method, *ewma_k, *ewma_weighting, opts.seed),
            ImputationMethod::Chained(cfg) => {
                let cfg = FcsConfig {
                    seed: opts.seed,
                    use_target: opts.use_target,
                    ..cfg.clone()
                };
                pool_mean(&fcs_impute(d, &cfg)?)
            }
            ImputationMethod::Joint(cfg) => {
                let cfg = JmConfig {
                    seed: opts.seed,
                    use_target: opts.use_target,
                    ..cfg.clone()
                };
                pool_mean(&jm_impute(d, &cfg)?)
            }
        }
    }
}

/// Applies a series method to every patient x time-varying feature series.
/// A series with no observed value takes the feature's observed mean over
/// the whole dataset.
pub fn impute_series_dataset(
    d: &LongitudinalDataset,
    method: SeriesMethod,
    ewma_k: usize,
    ewma_weighting: EwmaWeighting,
    seed: u64,
) -> Result<CompletedDataset, ImputeError> {
    let schema = d.schema();
    let n_feat = schema.len();
    let mut filled: Vec<Option<f64>> = vec![None; d.len() * n_feat];
    for f in 0..n_feat {
        if d.n_missing_in(f) == 0 {
            continue;
        }
        if schema.feature(f).kind != FeatureKind::TimeVarying {
            return Err(ImputeError::Config(format!(
                "{} has missing cells but is not time-varying",
                schema.feature(f).name
            )));
        }
        let observed = d.observed_values(f);
        if observed.is_empty() {
            return Err(ImputeError::InsufficientRows {
                feature: schema.feature(f).name.clone(),
                observed: 0,
                needed: 1,
            });
        }
        let global_mean = observed.iter().sum::<f64>() / observed.len() as f64;
        for span in d.patients() {
            let rows = span.rows.clone();
            let times: Vec<i64> = rows.clone().map(|r| d.records()[r].t_days).collect();
            let values: Vec<Option<f64>> = rows.clone().map(|r| d.cell(r, f)).collect();
            if values.iter().all(Option::is_some) {
                continue;
            }
            let s = SeriesView::new(&times, &values);
            let out = match method {
                SeriesMethod::Linear => impute_linear(s),
                SeriesMethod::Spline => impute_spline(s),
                SeriesMethod::Locf => impute_locf(s),
                SeriesMethod::Ewma => impute_ewma(s, ewma_k, ewma_weighting),
            };
            let out = match out {
                Ok(v) => v,
                Err(ImputeError::NoObserved) => vec![global_mean; values.len()],
                Err(e) => return Err(e),
            };
            for (r, v) in rows.zip(out) {
                filled[r * n_feat + f] = Some(v);
            }
        }
    }
    let id = ImputationMethod::series(method).id();
    Ok(CompletedDataset::fill(
        d,
        |r, f| filled[r * n_feat + f].expect("every missing cell filled"),
        Provenance {
            method: id,
            imputation_index: 0,
            seed,
            m: 1,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::tests::{full, rec};
    use crate::data::FeatureSchema;

    fn small() -> LongitudinalDataset {
        let mut a = full(1.0);
        a[0] = None;
        let mut b = full(3.0);
        b[1] = None;
        LongitudinalDataset::new(
            FeatureSchema::ms_default(),
            vec![
                rec("p1", 0, full(0.0), 1.0),
                rec("p1", 10, a, 1.5),
                rec("p1", 20, full(2.0), 2.0),
                rec("p2", 0, [None; 8], 2.0),
                rec("p2", 5, b, 2.5),
            ],
        )
        .unwrap()
    }

    #[test]
    fn registry_has_fourteen_distinct_ids() {
        let all = ImputationMethod::all_defaults();
        assert_eq!(all.len(), 14);
        let ids: std::collections::BTreeSet<String> = all.iter().map(|m| m.id()).collect();
        assert_eq!(ids.len(), 14);
        for id in METHOD_IDS {
            assert_eq!(ImputationMethod::from_id(id).unwrap().id(), id);
        }
        assert!(ImputationMethod::from_id("mean").is_none());
    }

    #[test]
    fn series_driver_fills_and_falls_back() {
        let d = small();
        let c = impute_series_dataset(&d, SeriesMethod::Linear, 4, EwmaWeighting::Index, 0).unwrap();
        assert!(c.dataset.is_complete());
        assert_eq!(c.imputed_cells.len(), d.n_missing());
        let pyr = d.schema().index_of("pyramidal").unwrap();
        // p1 pyramidal at t=10 lies between 0 and 2
        assert_eq!(c.value(1, pyr), 1.0);
        // p2 observes pyramidal = 3 at t=5
        assert_eq!(c.value(3, pyr), 3.0);
        // p2 never observes cerebellar: global observed mean
        let bs = d.schema().index_of("cerebellar").unwrap();
        let obs = d.observed_values(bs);
        assert_eq!(c.value(4, bs), obs.iter().sum::<f64>() / obs.len() as f64);
        for (r, rec) in d.records().iter().enumerate() {
            for (f, v) in rec.values.iter().enumerate() {
                if let Some(v) = v {
                    assert_eq!(c.value(r, f).to_bits(), v.to_bits());
                }
            }
        }
    }

    #[test]
    fn pool_mean_of_two() {
        let d = small();
        let mk = |v: f64, i: usize| {
            CompletedDataset::fill(
                &d,
                |_, _| v,
                Provenance {
                    method: "x".into(),
                    imputation_index: i,
                    seed: 0,
                    m: 1,
                },
            )
        };
        let a = mk(1.0, 0);
        assert_eq!(pool_mean(std::slice::from_ref(&a)).unwrap(), a);
        let p = pool_mean(&[a.clone(), mk(3.0, 1)]).unwrap();
        assert_eq!(p.provenance.m, 2);
        for &(r, f) in &p.imputed_cells {
            assert_eq!(p.value(r, f), 2.0);
        }
        let mut bad = mk(3.0, 1);
        bad.imputed_cells.pop();
        assert!(matches!(pool_mean(&[a, bad]), Err(ImputeError::Mismatch(_))));
        assert!(pool_mean(&[]).is_err());
    }
}
