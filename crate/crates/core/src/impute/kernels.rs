//! Draw kernels for chained-equations imputation.
//!
//! Each kernel takes the observed design rows `x_obs` with their targets
//! `y_obs`, the design rows `x_mis` of the cells to fill, and returns one draw
//! per missing row. Design matrices carry no intercept column; the linear
//! kernels add one.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::error::ImputeError;
use crate::linalg::{std_normal, uniform_index, LeastSquares};
use crate::rng::Rng;
use crate::tree::{FeatureBins, RegressionTree, TreeParams};

fn singular() -> ImputeError {
    ImputeError::Singular { feature: String::new() }
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] })
}

fn fit_ols(x_obs: &DMatrix<f64>, y_obs: &[f64]) -> Result<(LeastSquares, DMatrix<f64>), ImputeError> {
    let xi = with_intercept(x_obs);
    if xi.nrows() <= xi.ncols() {
        return Err(ImputeError::InsufficientRows {
            feature: String::new(),
            observed: xi.nrows(),
            needed: xi.ncols() + 1,
        });
    }
    let y = DVector::from_column_slice(y_obs);
    let fit = LeastSquares::fit(&xi, &y).ok_or_else(singular)?;
    Ok((fit, xi))
}

/// Bayesian linear regression draw: `sigma*` from its scaled inverse-chi^2
/// posterior, `beta*` given `sigma*`, plus residual noise.
pub fn kernel_blg(
    x_obs: &DMatrix<f64>,
    y_obs: &[f64],
    x_mis: &DMatrix<f64>,
    rng: &mut Rng,
) -> Result<Vec<f64>, ImputeError> {
    if x_mis.nrows() == 0 {
        return Ok(Vec::new());
    }
    let (fit, _) = fit_ols(x_obs, y_obs)?;
    let (beta, sigma) = fit.posterior_draw(rng);
    let pred = with_intercept(x_mis) * beta;
    Ok(pred.iter().map(|m| m + sigma * std_normal(rng)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearVariant {
    /// Coefficients from a bootstrap resample, plus residual noise.
    Bootstrap,
    /// Deterministic prediction at the least-squares fit.
    Prediction,
    /// Least-squares fit plus residual noise; no coefficient uncertainty.
    NoParameterUncertainty,
}

pub fn kernel_lg_variant(
    x_obs: &DMatrix<f64>,
    y_obs: &[f64],
    x_mis: &DMatrix<f64>,
    variant: LinearVariant,
    rng: &mut Rng,
) -> Result<Vec<f64>, ImputeError> {
    if x_mis.nrows() == 0 {
        return Ok(Vec::new());
    }
    let xm = with_intercept(x_mis);
    match variant {
        LinearVariant::Prediction => {
            let (fit, _) = fit_ols(x_obs, y_obs)?;
            Ok((xm * fit.beta).iter().copied().collect())
        }
        LinearVariant::NoParameterUncertainty => {
            let (fit, _) = fit_ols(x_obs, y_obs)?;
            let sigma = fit.sigma2_hat().sqrt();
            Ok((xm * fit.beta).iter().map(|m| m + sigma * std_normal(rng)).collect())
        }
        LinearVariant::Bootstrap => {
            let n = x_obs.nrows();
            let idx: Vec<usize> = (0..n).map(|_| uniform_index(n, rng)).collect();
            let xb = x_obs.select_rows(idx.iter());
            let yb: Vec<f64> = idx.iter().map(|&i| y_obs[i]).collect();
            let (fit, _) = fit_ols(&xb, &yb)?;
            let sigma = fit.sigma2_hat().sqrt();
            Ok((xm * fit.beta).iter().map(|m| m + sigma * std_normal(rng)).collect())
        }
    }
}

/// Predictive mean matching: observed rows are scored at the least-squares
/// fit, missing rows at a posterior coefficient draw, and each missing row
/// takes the value of a donor drawn uniformly from the `donors` observed
/// rows with the closest scores.
pub fn kernel_pmm(
    x_obs: &DMatrix<f64>,
    y_obs: &[f64],
    x_mis: &DMatrix<f64>,
    donors: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>, ImputeError> {
    if x_mis.nrows() == 0 {
        return Ok(Vec::new());
    }
    let needed = donors + x_obs.ncols() + 1;
    if x_obs.nrows() < needed {
        return Err(ImputeError::InsufficientRows {
            feature: String::new(),
            observed: x_obs.nrows(),
            needed,
        });
    }
    let (fit, xi) = fit_ols(x_obs, y_obs)?;
    let (beta_draw, _) = fit.posterior_draw(rng);
    let score_obs: Vec<f64> = (xi * &fit.beta).iter().copied().collect();
    let score_mis: Vec<f64> = (with_intercept(x_mis) * beta_draw).iter().copied().collect();
    Ok(match_donors(&score_obs, y_obs, &score_mis, donors, rng))
}

/// For each target score, picks uniformly among the `donors` observed rows
/// whose scores are nearest; equal distances prefer the lower row index.
pub fn match_donors(score_obs: &[f64], y_obs: &[f64], score_mis: &[f64], donors: usize, rng: &mut Rng) -> Vec<f64> {
    let n = score_obs.len();
    let k = donors.clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| score_obs[a].total_cmp(&score_obs[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| score_obs[i]).collect();
    let mut pool: Vec<usize> = Vec::with_capacity(k);
    score_mis
        .iter()
        .map(|&s| {
            pool.clear();
            let mut right = sorted.partition_point(|&v| v < s);
            let mut left = right;
            while pool.len() < k {
                let take_left = match (left > 0, right < n) {
                    (true, true) => {
                        let dl = s - sorted[left - 1];
                        let dr = sorted[right] - s;
                        dl < dr || (dl == dr && order[left - 1] < order[right])
                    }
                    (true, false) => true,
                    (false, true) => false,
                    (false, false) => break,
                };
                if take_left {
                    left -= 1;
                    pool.push(order[left]);
                } else {
                    pool.push(order[right]);
                    right += 1;
                }
            }
            y_obs[pool[rng.random_range(0..pool.len())]]
        })
        .collect()
}

fn draw_member(members: &[f64], rng: &mut Rng) -> f64 {
    members[uniform_index(members.len(), rng)]
}

/// One regression tree on all observed rows; each missing row draws a
/// member of its leaf.
pub fn kernel_cart(
    x_obs: &DMatrix<f64>,
    y_obs: &[f64],
    x_mis: &DMatrix<f64>,
    min_leaf: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>, ImputeError> {
    if x_mis.nrows() == 0 {
        return Ok(Vec::new());
    }
    if y_obs.is_empty() {
        return Err(ImputeError::NoObserved);
    }
    let bins = FeatureBins::exact(x_obs);
    let params = TreeParams {
        min_leaf,
        max_features: None,
        keep_members: true,
    };
    let tree = RegressionTree::grow(&bins, y_obs, (0..y_obs.len()).collect(), &params, rng);
    Ok((0..x_mis.nrows())
        .map(|i| {
            let (members, _) = tree.leaf(|f| x_mis[(i, f)]);
            draw_member(members, rng)
        })
        .collect())
}

/// `n_trees` bootstrap trees with `ceil(sqrt(p))` candidate features per
/// split; each missing row picks one tree, then a member of its leaf.
pub fn kernel_rf(
    x_obs: &DMatrix<f64>,
    y_obs: &[f64],
    x_mis: &DMatrix<f64>,
    n_trees: usize,
    min_leaf: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>, ImputeError> {
    if x_mis.nrows() == 0 {
        return Ok(Vec::new());
    }
    if y_obs.is_empty() {
        return Err(ImputeError::NoObserved);
    }
    let n = y_obs.len();
    let p = x_obs.ncols();
    let bins = FeatureBins::exact(x_obs);
    let params = TreeParams {
        min_leaf,
        max_features: Some((p as f64).sqrt().ceil() as usize),
        keep_members: true,
    };
    let trees: Vec<RegressionTree> = (0..n_trees.max(1))
        .map(|_| {
            let sample: Vec<usize> = (0..n).map(|_| uniform_index(n, rng)).collect();
            RegressionTree::grow(&bins, y_obs, sample, &params, rng)
        })
        .collect();
    Ok((0..x_mis.nrows())
        .map(|i| {
            let t = &trees[uniform_index(trees.len(), rng)];
            let (members, _) = t.leaf(|f| x_mis[(i, f)]);
            draw_member(members, rng)
        })
        .collect())
}
