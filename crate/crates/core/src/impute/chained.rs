//! Chained-equations (fully conditional specification) multiple imputation.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureKind, LongitudinalDataset};
use crate::error::ImputeError;
use crate::impute::kernels::{kernel_blg, kernel_cart, kernel_lg_variant, kernel_pmm, kernel_rf, LinearVariant};
use crate::impute::{CompletedDataset, Provenance};
use crate::linalg::uniform_index;
use crate::rng::{rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FcsKernel {
    Pmm,
    Cart,
    Rf,
    Blg,
    Lg,
    Lgp,
    Lgnob,
}

impl FcsKernel {
    pub const ALL: [FcsKernel; 7] = [
        FcsKernel::Pmm,
        FcsKernel::Cart,
        FcsKernel::Rf,
        FcsKernel::Blg,
        FcsKernel::Lg,
        FcsKernel::Lgp,
        FcsKernel::Lgnob,
    ];

    pub fn id(self) -> &'static str {
        match self {
            FcsKernel::Pmm => "pmm",
            FcsKernel::Cart => "cart",
            FcsKernel::Rf => "rf",
            FcsKernel::Blg => "blg",
            FcsKernel::Lg => "lg",
            FcsKernel::Lgp => "lgp",
            FcsKernel::Lgnob => "lgnob",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.id() == id)
    }

    fn is_linear(self) -> bool {
        !matches!(self, FcsKernel::Pmm | FcsKernel::Cart | FcsKernel::Rf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcsConfig {
    pub kernel: FcsKernel,
    pub m: usize,
    pub n_cycles: usize,
    pub donors: usize,
    pub n_trees: usize,
    pub min_leaf: usize,
    pub seed: u64,
    /// Include EDSS among the predictors of each feature.
    pub use_target: bool,
}

impl FcsConfig {
    pub fn new(kernel: FcsKernel) -> Self {
        FcsConfig {
            kernel,
            m: 5,
            n_cycles: 10,
            donors: 5,
            n_trees: 10,
            min_leaf: 5,
            seed: 0,
            use_target: false,
        }
    }

    fn validate(&self) -> Result<(), ImputeError> {
        let bad = |what: &str| Err(ImputeError::Config(format!("{what} must be >= 1")));
        if self.m == 0 {
            return bad("m");
        }
        if self.n_cycles == 0 {
            return bad("n_cycles");
        }
        if self.donors == 0 {
            return bad("donors");
        }
        if self.n_trees == 0 {
            return bad("n_trees");
        }
        if self.min_leaf == 0 {
            return bad("min_leaf");
        }
        Ok(())
    }
}

/// Mean of each incomplete feature's imputed cells after every cycle:
/// `cycles[c][j]` for the `j`-th entry of `features`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub features: Vec<usize>,
    pub cycles: Vec<Vec<f64>>,
}

struct Plan {
    /// Incomplete features in visiting order.
    order: Vec<usize>,
    predictors: Vec<Vec<usize>>,
    obs_rows: Vec<Vec<usize>>,
    mis_rows: Vec<Vec<usize>>,
}

fn plan(d: &LongitudinalDataset, cfg: &FcsConfig) -> Result<Plan, ImputeError> {
    let schema = d.schema();
    let p = schema.len();
    let target = schema.target_index();
    let mut obs_rows = vec![Vec::new(); p];
    let mut mis_rows = vec![Vec::new(); p];
    for (r, rec) in d.records().iter().enumerate() {
        for (f, c) in rec.values.iter().enumerate() {
            if c.is_some() {
                obs_rows[f].push(r);
            } else {
                mis_rows[f].push(r);
            }
        }
    }
    let mut order: Vec<usize> = (0..p).filter(|&f| !mis_rows[f].is_empty()).collect();
    for &f in &order {
        let feat = schema.feature(f);
        if feat.kind != FeatureKind::TimeVarying {
            return Err(ImputeError::Config(format!(
                "{} has missing cells but is not time-varying",
                feat.name
            )));
        }
    }
    order.sort_by_key(|&f| (mis_rows[f].len(), f));
    let predictors: Vec<Vec<usize>> = (0..p)
        .map(|f| (0..p).filter(|&g| g != f && (cfg.use_target || g != target)).collect())
        .collect();
    for &f in &order {
        let mut needed = cfg.donors.max(cfg.min_leaf) + 1;
        if cfg.kernel.is_linear() || cfg.kernel == FcsKernel::Pmm {
            needed = needed.max(predictors[f].len() + 2);
        }
        if cfg.kernel == FcsKernel::Pmm {
            needed = needed.max(cfg.donors + predictors[f].len() + 1);
        }
        if obs_rows[f].len() < needed {
            return Err(ImputeError::InsufficientRows {
                feature: schema.feature(f).name.clone(),
                observed: obs_rows[f].len(),
                needed,
            });
        }
    }
    Ok(Plan {
        order,
        predictors,
        obs_rows,
        mis_rows,
    })
}

fn design(cols: &[Vec<f64>], predictors: &[usize], rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), predictors.len(), |i, j| cols[predictors[j]][rows[i]])
}

fn draw(
    cfg: &FcsConfig,
    x_obs: &DMatrix<f64>,
    y_obs: &[f64],
    x_mis: &DMatrix<f64>,
    rng: &mut Rng,
) -> Result<Vec<f64>, ImputeError> {
    match cfg.kernel {
        FcsKernel::Pmm => kernel_pmm(x_obs, y_obs, x_mis, cfg.donors, rng),
        FcsKernel::Cart => kernel_cart(x_obs, y_obs, x_mis, cfg.min_leaf, rng),
        FcsKernel::Rf => kernel_rf(x_obs, y_obs, x_mis, cfg.n_trees, cfg.min_leaf, rng),
        FcsKernel::Blg => kernel_blg(x_obs, y_obs, x_mis, rng),
        FcsKernel::Lg => kernel_lg_variant(x_obs, y_obs, x_mis, LinearVariant::Bootstrap, rng),
        FcsKernel::Lgp => kernel_lg_variant(x_obs, y_obs, x_mis, LinearVariant::Prediction, rng),
        FcsKernel::Lgnob => kernel_lg_variant(x_obs, y_obs, x_mis, LinearVariant::NoParameterUncertainty, rng),
    }
}

fn with_feature(e: ImputeError, name: &str) -> ImputeError {
    match e {
        ImputeError::Singular { .. } => ImputeError::Singular {
            feature: name.to_string(),
        },
        ImputeError::InsufficientRows { observed, needed, .. } => ImputeError::InsufficientRows {
            feature: name.to_string(),
            observed,
            needed,
        },
        other => other,
    }
}

fn run_chain(
    d: &LongitudinalDataset,
    cfg: &FcsConfig,
    plan: &Plan,
    chain: usize,
) -> Result<(CompletedDataset, ChainTrace), ImputeError> {
    let seed = cfg.seed.wrapping_add(chain as u64);
    let mut rng = rng_from_seed(seed);
    let p = d.schema().len();
    let n = d.len();
    let mut cols: Vec<Vec<f64>> = (0..p)
        .map(|f| (0..n).map(|r| d.cell(r, f).unwrap_or(f64::NAN)).collect())
        .collect();
    for &f in &plan.order {
        let obs = &plan.obs_rows[f];
        for &r in &plan.mis_rows[f] {
            cols[f][r] = cols[f][obs[uniform_index(obs.len(), &mut rng)]];
        }
    }
    let mut trace = ChainTrace {
        features: plan.order.clone(),
        cycles: Vec::with_capacity(cfg.n_cycles),
    };
    for _ in 0..cfg.n_cycles {
        for &f in &plan.order {
            let preds = &plan.predictors[f];
            let obs = &plan.obs_rows[f];
            let mis = &plan.mis_rows[f];
            let x_obs = design(&cols, preds, obs);
            let x_mis = design(&cols, preds, mis);
            let y_obs: Vec<f64> = obs.iter().map(|&r| cols[f][r]).collect();
            let draws = draw(cfg, &x_obs, &y_obs, &x_mis, &mut rng)
                .map_err(|e| with_feature(e, &d.schema().feature(f).name))?;
            for (&r, v) in mis.iter().zip(draws) {
                cols[f][r] = v;
            }
        }
        trace.cycles.push(
            plan.order
                .iter()
                .map(|&f| {
                    let mis = &plan.mis_rows[f];
                    mis.iter().map(|&r| cols[f][r]).sum::<f64>() / mis.len() as f64
                })
                .collect(),
        );
    }
    let completed = CompletedDataset::fill(
        d,
        |r, f| cols[f][r],
        Provenance {
            method: cfg.kernel.id().to_string(),
            imputation_index: chain,
            seed,
            m: 1,
        },
    );
    Ok((completed, trace))
}

/// `cfg.m` completed datasets, one per independent chain.
pub fn fcs_impute(d: &LongitudinalDataset, cfg: &FcsConfig) -> Result<Vec<CompletedDataset>, ImputeError> {
    Ok(fcs_impute_traced(d, cfg)?.into_iter().map(|(c, _)| c).collect())
}

/// As [`fcs_impute`], also returning each chain's per-cycle trace.
pub fn fcs_impute_traced(
    d: &LongitudinalDataset,
    cfg: &FcsConfig,
) -> Result<Vec<(CompletedDataset, ChainTrace)>, ImputeError> {
    cfg.validate()?;
    let plan = plan(d, cfg)?;
    (0..cfg.m)
        .into_par_iter()
        .map(|chain| run_chain(d, cfg, &plan, chain))
        .collect()
}
