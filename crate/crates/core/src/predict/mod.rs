//! EDSS regressors on completed datasets: KNN, random forest, histogram
//! gradient boosting and epsilon-SVR.

pub mod forest;
pub mod gbt;
mod hist;
pub mod knn;
pub mod svr;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureKind, LongitudinalDataset};
use crate::error::PredictError;

pub use forest::{fit_rf, RandomForest};
pub use gbt::{fit_gbt, GradientBoosted};
pub use knn::{fit_knn, Knn};
pub use svr::{fit_svr, Svr};

/// Design matrix over static features, time-varying features and
/// (optionally) `t_days`, with EDSS targets and row provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub columns: Vec<String>,
    /// Patient of each row.
    pub patients: Vec<String>,
}

impl FeatureMatrix {
    /// Builds from a dataset with no missing cells.
    pub fn from_dataset(d: &LongitudinalDataset, include_time: bool) -> Result<Self, PredictError> {
        let schema = d.schema();
        let mut cols: Vec<usize> = schema.indices_of_kind(FeatureKind::Static);
        cols.extend(schema.time_varying());
        let mut columns: Vec<String> = cols.iter().map(|&f| schema.feature(f).name.clone()).collect();
        if include_time {
            columns.push("t_days".into());
        }
        let n = d.len();
        let p = columns.len();
        let target = schema.target_index();
        let mut x = DMatrix::zeros(n, p);
        let mut y = Vec::with_capacity(n);
        for (r, rec) in d.records().iter().enumerate() {
            for (j, &f) in cols.iter().enumerate() {
                x[(r, j)] = rec.values[f].ok_or_else(|| {
                    PredictError::Precondition(format!("missing {} at row {}", schema.feature(f).name, r + 1))
                })?;
            }
            if include_time {
                x[(r, p - 1)] = rec.t_days as f64;
            }
            y.push(
                rec.values[target]
                    .ok_or_else(|| PredictError::Precondition(format!("target missing at row {}", r + 1)))?,
            );
        }
        Ok(FeatureMatrix {
            x,
            y,
            columns,
            patients: d.records().iter().map(|r| r.patient_id.clone()).collect(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }
}

/// Per-column centring and scaling fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(train: &FeatureMatrix) -> Self {
        let (n, p) = train.x.shape();
        let mut mean = vec![0.0; p];
        let mut scale = vec![1.0; p];
        for j in 0..p {
            let col = train.x.column(j);
            let mu = col.iter().sum::<f64>() / n.max(1) as f64;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n.max(1) as f64;
            mean[j] = mu;
            if var > 0.0 {
                scale[j] = var.sqrt();
            }
        }
        Standardizer { mean, scale }
    }

    pub fn apply(&self, m: &FeatureMatrix) -> FeatureMatrix {
        let mut out = m.clone();
        for j in 0..m.n_features() {
            for i in 0..m.n_rows() {
                out.x[(i, j)] = (m.x[(i, j)] - self.mean[j]) / self.scale[j];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Knn,
    Rf,
    Gbt,
    Svr,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 4] = [
        PredictorKind::Knn,
        PredictorKind::Rf,
        PredictorKind::Gbt,
        PredictorKind::Svr,
    ];

    pub fn id(self) -> &'static str {
        match self {
            PredictorKind::Knn => "knn",
            PredictorKind::Rf => "rf",
            PredictorKind::Gbt => "gbt",
            PredictorKind::Svr => "svr",
        }
    }

    pub fn from_id(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.id() == s)
    }

    /// Defaults for every hyperparameter of the kind. `gamma = 0` for SVR
    /// stands for `1 / n_features`.
    pub fn defaults(self) -> BTreeMap<String, f64> {
        let pairs: &[(&str, f64)] = match self {
            PredictorKind::Knn => &[("k", 5.0)],
            PredictorKind::Rf => &[
                ("n_trees", 100.0),
                ("min_leaf", 1.0),
                ("max_features", 0.0),
                ("n_bins", 255.0),
            ],
            PredictorKind::Gbt => &[
                ("n_rounds", 100.0),
                ("learning_rate", 0.1),
                ("max_leaves", 31.0),
                ("n_bins", 255.0),
                ("min_leaf", 20.0),
            ],
            PredictorKind::Svr => &[
                ("c", 1.0),
                ("epsilon", 0.1),
                ("gamma", 0.0),
                ("tol", 1e-3),
                ("max_passes", 100.0),
                ("max_train_rows", 2000.0),
            ],
        };
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }
}

/// A predictor kind with a complete hyperparameter map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub kind: PredictorKind,
    pub hyperparameters: BTreeMap<String, f64>,
    pub seed: u64,
}

pub trait Model: Send + Sync {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64>;
    /// Hyperparameters and size figures for reports.
    fn summary(&self) -> serde_json::Value;
}

fn int_param(h: &BTreeMap<String, f64>, key: &str, min: f64) -> Result<usize, PredictError> {
    let v = h[key];
    if v.fract() != 0.0 || v < min || !v.is_finite() {
        return Err(PredictError::Hyper(format!("{key}={v} must be an integer >= {min}")));
    }
    Ok(v as usize)
}

impl PredictorSpec {
    /// Fills defaults for missing keys and validates ranges.
    pub fn new(kind: PredictorKind, overrides: &BTreeMap<String, f64>, seed: u64) -> Result<Self, PredictError> {
        let mut hyperparameters = kind.defaults();
        for (k, v) in overrides {
            if !hyperparameters.contains_key(k) {
                return Err(PredictError::Hyper(format!(
                    "unknown hyperparameter {k} for {}",
                    kind.id()
                )));
            }
            hyperparameters.insert(k.clone(), *v);
        }
        let spec = PredictorSpec {
            kind,
            hyperparameters,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), PredictError> {
        let h = &self.hyperparameters;
        for k in self.kind.defaults().keys() {
            if !h.contains_key(k) {
                return Err(PredictError::Hyper(format!("missing hyperparameter {k}")));
            }
        }
        match self.kind {
            PredictorKind::Knn => {
                int_param(h, "k", 1.0)?;
            }
            PredictorKind::Rf => {
                int_param(h, "n_trees", 1.0)?;
                int_param(h, "min_leaf", 1.0)?;
                int_param(h, "max_features", 0.0)?;
                int_param(h, "n_bins", 2.0)?;
            }
            PredictorKind::Gbt => {
                int_param(h, "n_rounds", 0.0)?;
                int_param(h, "max_leaves", 1.0)?;
                int_param(h, "n_bins", 2.0)?;
                int_param(h, "min_leaf", 1.0)?;
                let lr = h["learning_rate"];
                if !(lr > 0.0 && lr <= 1.0) {
                    return Err(PredictError::Hyper(format!("learning_rate={lr} outside (0, 1]")));
                }
            }
            PredictorKind::Svr => {
                let (c, eps, gamma, tol) = (h["c"], h["epsilon"], h["gamma"], h["tol"]);
                if !(c > 0.0) || !(eps >= 0.0) || !(gamma >= 0.0) || !(tol > 0.0) {
                    return Err(PredictError::Hyper(
                        "svr needs c > 0, epsilon >= 0, gamma >= 0, tol > 0".into(),
                    ));
                }
                int_param(h, "max_passes", 1.0)?;
                int_param(h, "max_train_rows", 2.0)?;
            }
        }
        Ok(())
    }

    /// Hyperparameters as a JSON object with sorted keys.
    pub fn hyperparameters_json(&self) -> String {
        serde_json::to_string(&self.hyperparameters).expect("finite map serializes")
    }

    fn rf_params(&self, n_features: usize) -> Result<forest::RfParams, PredictError> {
        let h = &self.hyperparameters;
        let mf = int_param(h, "max_features", 0.0)?;
        Ok(forest::RfParams {
            n_trees: int_param(h, "n_trees", 1.0)?,
            min_leaf: int_param(h, "min_leaf", 1.0)?,
            max_features: if mf == 0 {
                (n_features as f64).sqrt().ceil() as usize
            } else {
                mf
            },
            n_bins: int_param(h, "n_bins", 2.0)?,
            bootstrap: true,
        })
    }

    fn gbt_params(&self) -> Result<gbt::GbtParams, PredictError> {
        let h = &self.hyperparameters;
        Ok(gbt::GbtParams {
            n_rounds: int_param(h, "n_rounds", 0.0)?,
            learning_rate: h["learning_rate"],
            max_leaves: int_param(h, "max_leaves", 1.0)?,
            n_bins: int_param(h, "n_bins", 2.0)?,
            min_leaf: int_param(h, "min_leaf", 1.0)?,
        })
    }

    pub fn fit(&self, train: &FeatureMatrix) -> Result<Box<dyn Model>, PredictError> {
        self.validate()?;
        let h = &self.hyperparameters;
        let p = train.n_features();
        Ok(match self.kind {
            PredictorKind::Knn => Box::new(fit_knn(train, int_param(h, "k", 1.0)?)?),
            PredictorKind::Rf => Box::new(fit_rf(train, &self.rf_params(p)?, self.seed)?),
            PredictorKind::Gbt => Box::new(fit_gbt(train, &self.gbt_params()?, self.seed)?),
            PredictorKind::Svr => {
                let gamma = if h["gamma"] == 0.0 {
                    1.0 / p.max(1) as f64
                } else {
                    h["gamma"]
                };
                Box::new(fit_svr(
                    train,
                    &svr::SvrParams {
                        c: h["c"],
                        epsilon: h["epsilon"],
                        gamma,
                        tol: h["tol"],
                        max_passes: int_param(h, "max_passes", 1.0)?,
                        max_train_rows: int_param(h, "max_train_rows", 2.0)?,
                    },
                    self.seed,
                )?)
            }
        })
    }

    /// Ensemble-size hyperparameter whose smaller values are prefixes of a
    /// larger fit.
    fn size_key(&self) -> Option<&'static str> {
        match self.kind {
            PredictorKind::Rf => Some("n_trees"),
            PredictorKind::Gbt => Some("n_rounds"),
            _ => None,
        }
    }
}

/// Fits every grid point on `train` and predicts `x`, one result per point
/// in order. Points that differ only in ensemble size share the largest
/// fit and read its prefix, which reproduces each smaller fit exactly.
pub fn fit_predict_grid(
    grid: &[PredictorSpec],
    train: &FeatureMatrix,
    x: &DMatrix<f64>,
) -> Vec<Result<Vec<f64>, PredictError>> {
    let mut groups: BTreeMap<(PredictorKind, String, u64), Vec<usize>> = BTreeMap::new();
    for (i, spec) in grid.iter().enumerate() {
        let mut rest = spec.hyperparameters.clone();
        if let Some(k) = spec.size_key() {
            rest.remove(k);
        }
        let key = serde_json::to_string(&rest).expect("finite map serializes");
        groups.entry((spec.kind, key, spec.seed)).or_default().push(i);
    }
    let mut out: Vec<Option<Result<Vec<f64>, PredictError>>> = (0..grid.len()).map(|_| None).collect();
    for members in groups.values() {
        let Some(key) = grid[members[0]].size_key() else {
            for &i in members {
                out[i] = Some(grid[i].fit(train).map(|m| m.predict(x)));
            }
            continue;
        };
        let size = |i: usize| grid[i].hyperparameters[key];
        let largest = *members
            .iter()
            .max_by(|&&a, &&b| size(a).total_cmp(&size(b)))
            .expect("nonempty group");
        let spec = &grid[largest];
        let fitted: Result<Box<dyn Fn(usize) -> Vec<f64> + '_>, PredictError> = spec.validate().and_then(|_| {
            Ok(match spec.kind {
                PredictorKind::Rf => {
                    let m = fit_rf(train, &spec.rf_params(train.n_features())?, spec.seed)?;
                    Box::new(move |n| m.predict_prefix(x, n)) as Box<dyn Fn(usize) -> Vec<f64>>
                }
                _ => {
                    let m = fit_gbt(train, &spec.gbt_params()?, spec.seed)?;
                    Box::new(move |n| m.predict_prefix(x, n))
                }
            })
        });
        for &i in members {
            out[i] = Some(match &fitted {
                Ok(f) => grid[i].validate().map(|_| f(size(i) as usize)),
                Err(e) => Err(e.clone()),
            });
        }
    }
    out.into_iter().map(|r| r.expect("every grid point assigned")).collect()
}

/// Grid axes per predictor kind; a grid is the Cartesian product.
pub type GridAxes = BTreeMap<String, Vec<f64>>;

/// Default axes; SVR's `gamma` axis uses `1 / n_features` as its first point.
pub fn default_axes(kind: PredictorKind, n_features: usize) -> GridAxes {
    let axes: Vec<(&str, Vec<f64>)> = match kind {
        PredictorKind::Knn => vec![("k", vec![3.0, 5.0, 7.0, 11.0])],
        PredictorKind::Rf => vec![("n_trees", vec![100.0, 300.0]), ("min_leaf", vec![1.0, 5.0])],
        PredictorKind::Gbt => vec![("n_rounds", vec![100.0, 300.0]), ("learning_rate", vec![0.05, 0.1])],
        PredictorKind::Svr => vec![
            ("c", vec![1.0, 10.0]),
            ("gamma", vec![1.0 / n_features.max(1) as f64, 0.1]),
        ],
    };
    axes.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Cartesian product of `axes`, each point completed with defaults.
pub fn expand_grid(kind: PredictorKind, axes: &GridAxes, seed: u64) -> Result<Vec<PredictorSpec>, PredictError> {
    let mut points: Vec<BTreeMap<String, f64>> = vec![BTreeMap::new()];
    for (name, values) in axes {
        if values.is_empty() {
            return Err(PredictError::Hyper(format!("empty grid axis {name}")));
        }
        points = points
            .into_iter()
            .flat_map(|pt| {
                values.iter().map(move |v| {
                    let mut q = pt.clone();
                    q.insert(name.clone(), *v);
                    q
                })
            })
            .collect();
    }
    points.iter().map(|pt| PredictorSpec::new(kind, pt, seed)).collect()
}

/// Default grid for a kind over `n_features` input columns.
pub fn grid_for(kind: PredictorKind, n_features: usize, seed: u64) -> Vec<PredictorSpec> {
    expand_grid(kind, &default_axes(kind, n_features), seed).expect("default grids are valid")
}

/// Grid overrides as loaded from JSON: `{"knn": {"k": [3, 5]}, ...}`.
pub fn parse_grid_overrides(json: &str) -> Result<BTreeMap<PredictorKind, GridAxes>, PredictError> {
    let raw: BTreeMap<String, GridAxes> =
        serde_json::from_str(json).map_err(|e| PredictError::Hyper(format!("grid file: {e}")))?;
    raw.into_iter()
        .map(|(k, v)| {
            PredictorKind::from_id(&k)
                .map(|kind| (kind, v))
                .ok_or_else(|| PredictError::Hyper(format!("grid file: unknown predictor {k}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_sizes_and_validity() {
        let sizes: Vec<usize> = PredictorKind::ALL.iter().map(|&k| grid_for(k, 12, 0).len()).collect();
        assert_eq!(sizes, vec![4, 4, 4, 4]);
        for k in PredictorKind::ALL {
            for spec in grid_for(k, 12, 0) {
                spec.validate().unwrap();
            }
        }
    }

    #[test]
    fn single_point_override() {
        let o = parse_grid_overrides(r#"{"knn": {"k": [7]}}"#).unwrap();
        let g = expand_grid(PredictorKind::Knn, &o[&PredictorKind::Knn], 0).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].hyperparameters["k"], 7.0);
        assert!(parse_grid_overrides(r#"{"lasso": {}}"#).is_err());
        assert!(PredictorSpec::new(PredictorKind::Knn, &[("depth".to_string(), 1.0)].into(), 0).is_err());
        assert!(PredictorSpec::new(PredictorKind::Gbt, &[("learning_rate".to_string(), 1.5)].into(), 0).is_err());
        assert!(PredictorSpec::new(PredictorKind::Knn, &[("k".to_string(), 2.5)].into(), 0).is_err());
    }

    #[test]
    fn hyperparameter_json_is_sorted() {
        let s = PredictorSpec::new(PredictorKind::Gbt, &BTreeMap::new(), 0).unwrap();
        assert_eq!(
            s.hyperparameters_json(),
            r#"{"learning_rate":0.1,"max_leaves":31.0,"min_leaf":20.0,"n_bins":255.0,"n_rounds":100.0}"#
        );
    }

    #[test]
    fn shared_grid_fits_match_independent_fits() {
        use rand::Rng as _;
        let mut rng = crate::rng::rng_from_seed(4);
        let n = 120;
        let x: DMatrix<f64> = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = (0..n).map(|i| x[(i, 0)] * 2.0 + x[(i, 1)].abs()).collect();
        let train = FeatureMatrix {
            x,
            y,
            columns: vec!["a".into(), "b".into(), "c".into()],
            patients: vec!["p".into(); n],
        };
        let axes: GridAxes = [
            ("n_trees".to_string(), vec![3.0, 8.0]),
            ("min_leaf".to_string(), vec![1.0, 4.0]),
        ]
        .into();
        let mut grid = expand_grid(PredictorKind::Rf, &axes, 2).unwrap();
        let axes: GridAxes = [("n_rounds".to_string(), vec![0.0, 7.0, 20.0])].into();
        grid.extend(expand_grid(PredictorKind::Gbt, &axes, 2).unwrap());
        grid.extend(grid_for(PredictorKind::Knn, 3, 2));
        let shared = fit_predict_grid(&grid, &train, &train.x);
        for (spec, got) in grid.iter().zip(shared) {
            let direct = spec.fit(&train).unwrap().predict(&train.x);
            assert_eq!(got.unwrap(), direct, "{}", spec.hyperparameters_json());
        }
    }

    #[test]
    fn standardizer_uses_training_rows_only() {
        let train = FeatureMatrix {
            x: DMatrix::from_column_slice(4, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 5.0, 5.0, 5.0]),
            y: vec![0.0; 4],
            columns: vec!["a".into(), "b".into()],
            patients: vec!["p".into(); 4],
        };
        let s = Standardizer::fit(&train);
        assert_eq!(s.mean, vec![2.5, 5.0]);
        assert_eq!(s.scale[1], 1.0);
        let test = FeatureMatrix {
            x: DMatrix::from_column_slice(1, 2, &[2.5, 9.0]),
            ..train.clone()
        };
        let t = s.apply(&FeatureMatrix {
            y: vec![0.0],
            patients: vec!["q".into()],
            ..test
        });
        assert_eq!(t.x[(0, 0)], 0.0);
        assert_eq!(t.x[(0, 1)], 4.0);
    }
}
