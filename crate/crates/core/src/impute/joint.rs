//! Joint multivariate-normal imputation by Gibbs sampling.
//!
//! The engine works on a generic problem: an outcome matrix `Y` (n x p) with
//! a missingness mask, fully observed covariates `X` (n x q, intercept
//! included) and optional cluster labels. `Y_i = X_i B + u_c(i) + e_i` with
//! `e_i ~ N(0, Sigma_e)` and, when clustered, `u_c ~ N(0, Sigma_u)`.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::LongitudinalDataset;
use crate::error::ImputeError;
use crate::impute::{CompletedDataset, Provenance};
use crate::linalg::{
    cholesky_jitter, condition_number, sample_inv_wishart, std_normal, uniform_index, RIDGE_CONDITION,
};
use crate::rng::{rng_from_seed, Rng};

const DIVERGENCE: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JmLevel {
    /// Features and covariates jointly normal around a common mean.
    Single,
    /// Covariates as fixed effects plus per-patient random intercepts.
    Clustered,
    /// Covariates as fixed effects only.
    Lg,
}

impl JmLevel {
    pub fn id(self) -> &'static str {
        match self {
            JmLevel::Single => "jm_single",
            JmLevel::Clustered => "jm_clustered",
            JmLevel::Lg => "jm_lg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JmConfig {
    pub level: JmLevel,
    pub n_burn: usize,
    pub n_between: usize,
    pub m: usize,
    pub mh_step: f64,
    pub seed: u64,
    /// EDSS enters the model (as a covariate, or jointly for `Single`).
    pub use_target: bool,
}

impl JmConfig {
    pub fn new(level: JmLevel) -> Self {
        JmConfig {
            level,
            n_burn: 1000,
            n_between: 100,
            m: 5,
            mh_step: 0.1,
            seed: 0,
            use_target: false,
        }
    }

    fn validate(&self) -> Result<(), ImputeError> {
        if self.n_burn == 0 || self.n_between == 0 || self.m == 0 {
            return Err(ImputeError::Config("n_burn, n_between and m must be >= 1".into()));
        }
        if !(self.mh_step > 0.0 && self.mh_step.is_finite()) {
            return Err(ImputeError::Config("mh_step must be > 0".into()));
        }
        Ok(())
    }
}

/// Conditional mean and covariance of the unobserved coordinates of
/// `N(mu, sigma)` given the observed ones. Unobserved coordinates are the
/// complement of `observed_idx`, in ascending order.
pub fn conditional_normal(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    observed_idx: &[usize],
    observed_vals: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>), ImputeError> {
    let p = mu.len();
    let mut is_obs = vec![false; p];
    for &i in observed_idx {
        is_obs[i] = true;
    }
    let mis: Vec<usize> = (0..p).filter(|&i| !is_obs[i]).collect();
    let s_mm = sigma.select_rows(mis.iter()).select_columns(mis.iter());
    let mu_m = mu.select_rows(mis.iter());
    if observed_idx.is_empty() {
        return Ok((mu_m, s_mm));
    }
    let s_oo = sigma
        .select_rows(observed_idx.iter())
        .select_columns(observed_idx.iter());
    let s_mo = sigma.select_rows(mis.iter()).select_columns(observed_idx.iter());
    let chol = s_oo
        .cholesky()
        .ok_or_else(|| ImputeError::NotPositiveDefinite("observed block".into()))?;
    let diff = DVector::from_iterator(
        observed_idx.len(),
        observed_idx.iter().zip(observed_vals).map(|(&i, &v)| v - mu[i]),
    );
    let mean = mu_m + &s_mo * chol.solve(&diff);
    let cov = s_mm - &s_mo * chol.solve(&s_mo.transpose());
    Ok((mean, (&cov + cov.transpose()) * 0.5))
}

/// Generic joint-model input.
#[derive(Debug, Clone)]
pub struct JmProblem {
    pub y: DMatrix<f64>,
    /// Row-major `n * p` mask; `true` where `y` is observed.
    pub observed: Vec<bool>,
    pub x: DMatrix<f64>,
    /// Cluster index per row, `0..n_clusters`.
    pub clusters: Option<Vec<usize>>,
}

impl JmProblem {
    fn n(&self) -> usize {
        self.y.nrows()
    }

    fn p(&self) -> usize {
        self.y.ncols()
    }

    fn is_obs(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.p() + j]
    }
}

/// Sampler state after a completed Gibbs iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct JmState {
    pub beta: DMatrix<f64>,
    /// Random effects, one row per cluster (zero rows when unclustered).
    pub u: DMatrix<f64>,
    pub sigma_e: DMatrix<f64>,
    pub sigma_u: Option<DMatrix<f64>>,
    pub y: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub sigma_e_diag: Vec<f64>,
    pub sigma_u_diag: Vec<f64>,
    pub accepted: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JmDiagnostics {
    pub proposed: usize,
    pub accepted: usize,
    pub trace: Vec<TracePoint>,
}

impl JmDiagnostics {
    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }

    /// One row per iteration: `iteration,accepted,sigma_e_<j>...,sigma_u_<j>...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let pe = self.trace.first().map_or(0, |t| t.sigma_e_diag.len());
        let pu = self.trace.first().map_or(0, |t| t.sigma_u_diag.len());
        write!(w, "iteration,accepted")?;
        for j in 0..pe {
            write!(w, ",sigma_e_{j}")?;
        }
        for j in 0..pu {
            write!(w, ",sigma_u_{j}")?;
        }
        writeln!(w)?;
        for t in &self.trace {
            let acc = match t.accepted {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            };
            write!(w, "{},{acc}", t.iteration)?;
            for v in t.sigma_e_diag.iter().chain(&t.sigma_u_diag) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        if let Some(rate) = self.acceptance_rate() {
            writeln!(w, "# acceptance_rate={rate}")?;
        }
        Ok(())
    }
}

struct Pattern {
    mis: Vec<usize>,
    obs: Vec<usize>,
    rows: Vec<usize>,
}

fn patterns(problem: &JmProblem) -> Vec<Pattern> {
    let p = problem.p();
    let mut groups: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
    for i in 0..problem.n() {
        let key: Vec<bool> = (0..p).map(|j| problem.is_obs(i, j)).collect();
        if key.iter().all(|&o| o) {
            continue;
        }
        groups.entry(key).or_default().push(i);
    }
    groups
        .into_iter()
        .map(|(key, rows)| Pattern {
            mis: (0..p).filter(|&j| !key[j]).collect(),
            obs: (0..p).filter(|&j| key[j]).collect(),
            rows,
        })
        .collect()
}

fn npd(what: &str) -> ImputeError {
    ImputeError::NotPositiveDefinite(what.into())
}

/// Lower Cholesky factor as the unconstrained vector: log diagonal, raw
/// strict lower triangle, row by row.
fn log_cholesky(l: &DMatrix<f64>) -> Vec<f64> {
    let p = l.nrows();
    let mut theta = Vec::with_capacity(p * (p + 1) / 2);
    for i in 0..p {
        for j in 0..=i {
            theta.push(if i == j { l[(i, i)].ln() } else { l[(i, j)] });
        }
    }
    theta
}

fn from_log_cholesky(theta: &[f64], p: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(p, p);
    let mut k = 0;
    for i in 0..p {
        for j in 0..=i {
            l[(i, j)] = if i == j { theta[k].exp() } else { theta[k] };
            k += 1;
        }
    }
    l
}

/// Log conditional density of `Sigma_u` in log-Cholesky coordinates: the
/// inverse-Wishart(p + 2, I) prior, the random-effect likelihood and the
/// Jacobian of the parameterization.
fn log_target_sigma_u(l: &DMatrix<f64>, scatter: &DMatrix<f64>, n_clusters: usize) -> f64 {
    let p = l.nrows();
    let nu0 = (p + 2) as f64;
    let log_det: f64 = 2.0 * (0..p).map(|i| l[(i, i)].ln()).sum::<f64>();
    let a = DMatrix::<f64>::identity(p, p) + scatter;
    let w = l.solve_lower_triangular(&a).expect("positive diagonal");
    let v = l.solve_lower_triangular(&w.transpose()).expect("positive diagonal");
    let trace = v.trace();
    let jacobian: f64 = (0..p).map(|i| (p - i + 1) as f64 * l[(i, i)].ln()).sum();
    -0.5 * (nu0 + p as f64 + 1.0 + n_clusters as f64) * log_det - 0.5 * trace + jacobian
}

/// One random-walk Metropolis-Hastings update of `Sigma_u` on its
/// log-Cholesky coordinates, each perturbed with sd `mh_step / sqrt(d)`.
/// Returns whether the proposal was accepted; on rejection `state` is left
/// untouched.
pub fn mh_update_sigma_u(state: &mut JmState, mh_step: f64, rng: &mut Rng) -> bool {
    let Some(sigma_u) = state.sigma_u.as_ref() else {
        return false;
    };
    let p = sigma_u.nrows();
    let Some(chol) = sigma_u.clone().cholesky() else {
        return false;
    };
    let l = chol.l();
    let scatter = state.u.tr_mul(&state.u);
    let j = state.u.nrows();
    let theta = log_cholesky(&l);
    let step = mh_step / (theta.len() as f64).sqrt();
    let proposal: Vec<f64> = theta.iter().map(|t| t + step * std_normal(rng)).collect();
    let l_new = from_log_cholesky(&proposal, p);
    if l_new.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let log_ratio = log_target_sigma_u(&l_new, &scatter, j) - log_target_sigma_u(&l, &scatter, j);
    let u: f64 = rng.random::<f64>();
    if log_ratio.is_finite() && u.ln() < log_ratio {
        let s = &l_new * l_new.transpose();
        state.sigma_u = Some((&s + s.transpose()) * 0.5);
        true
    } else {
        false
    }
}

struct Fixed {
    xtx_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    xtx_inv_chol: DMatrix<f64>,
    patterns: Vec<Pattern>,
    cluster_sizes: Vec<usize>,
}

fn prepare(problem: &JmProblem) -> Result<Fixed, ImputeError> {
    let q = problem.x.ncols();
    let mut xtx = problem.x.tr_mul(&problem.x);
    if condition_number(&xtx) > RIDGE_CONDITION {
        let ridge = 1e-6 * xtx.trace() / q as f64;
        for i in 0..q {
            xtx[(i, i)] += ridge;
        }
    }
    let xtx_chol = cholesky_jitter(&xtx).ok_or_else(|| ImputeError::Singular {
        feature: "covariates".into(),
    })?;
    let xtx_inv_chol = cholesky_jitter(&xtx_chol.inverse()).ok_or_else(|| npd("(X'X)^-1"))?.l();
    let mut cluster_sizes = Vec::new();
    if let Some(c) = &problem.clusters {
        let k = c.iter().max().map_or(0, |m| m + 1);
        cluster_sizes = vec![0; k];
        for &ci in c {
            cluster_sizes[ci] += 1;
        }
    }
    Ok(Fixed {
        xtx_chol,
        xtx_inv_chol,
        patterns: patterns(problem),
        cluster_sizes,
    })
}

fn initial_state(problem: &JmProblem, fixed: &Fixed, rng: &mut Rng) -> Result<JmState, ImputeError> {
    let (n, p) = (problem.n(), problem.p());
    let mut y = problem.y.clone();
    for j in 0..p {
        let obs: Vec<usize> = (0..n).filter(|&i| problem.is_obs(i, j)).collect();
        if obs.is_empty() {
            return Err(ImputeError::NoObserved);
        }
        for i in 0..n {
            if !problem.is_obs(i, j) {
                y[(i, j)] = problem.y[(obs[uniform_index(obs.len(), rng)], j)];
            }
        }
    }
    let beta = fixed.xtx_chol.solve(&problem.x.tr_mul(&y));
    let resid = &y - &problem.x * &beta;
    let mut sigma_e = resid.tr_mul(&resid) / n as f64;
    for j in 0..p {
        sigma_e[(j, j)] += 1e-6;
    }
    let k = fixed.cluster_sizes.len();
    let (u, sigma_u) = match &problem.clusters {
        None => (DMatrix::zeros(0, p), None),
        Some(c) => {
            // between-cluster moment estimate, floored and jittered
            let mut means = DMatrix::<f64>::zeros(k, p);
            for (i, &ci) in c.iter().enumerate() {
                for j in 0..p {
                    means[(ci, j)] += resid[(i, j)] / fixed.cluster_sizes[ci] as f64;
                }
            }
            let mean_size = n as f64 / k as f64;
            let between = means.tr_mul(&means) / k as f64 - &sigma_e / mean_size;
            let eig = ((&between + between.transpose()) * 0.5).symmetric_eigen();
            let floor = 1e-3 * sigma_e.trace() / p as f64;
            let vals = eig
                .eigenvalues
                .map(|v| v.max(floor) * (1.0 + 1e-3 * std_normal(rng).abs()));
            let s = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
            (DMatrix::zeros(k, p), Some((&s + s.transpose()) * 0.5))
        }
    };
    Ok(JmState {
        beta,
        u,
        sigma_e,
        sigma_u,
        y,
    })
}

/// Random-effect row for each data row (zero when unclustered).
fn add_effects(m: &mut DMatrix<f64>, state: &JmState, problem: &JmProblem, sign: f64) {
    if let Some(c) = &problem.clusters {
        for (i, &ci) in c.iter().enumerate() {
            for j in 0..m.ncols() {
                m[(i, j)] += sign * state.u[(ci, j)];
            }
        }
    }
}

fn step_missing(
    problem: &JmProblem,
    fixed: &Fixed,
    state: &mut JmState,
    iteration: usize,
    rng: &mut Rng,
) -> Result<(), ImputeError> {
    if fixed.patterns.is_empty() {
        return Ok(());
    }
    let mut mean = &problem.x * &state.beta;
    add_effects(&mut mean, state, problem, 1.0);
    let sigma = &state.sigma_e;
    let mut z = Vec::new();
    for pat in &fixed.patterns {
        let s_mm = sigma.select_rows(pat.mis.iter()).select_columns(pat.mis.iter());
        let (a, cov) = if pat.obs.is_empty() {
            (DMatrix::zeros(pat.mis.len(), 0), s_mm)
        } else {
            let s_oo = sigma.select_rows(pat.obs.iter()).select_columns(pat.obs.iter());
            let s_mo = sigma.select_rows(pat.mis.iter()).select_columns(pat.obs.iter());
            let chol = cholesky_jitter(&s_oo).ok_or_else(|| npd("observed block of Sigma_e"))?;
            let a = chol.solve(&s_mo.transpose()).transpose();
            let cov = s_mm - &a * s_mo.transpose();
            (a, cov)
        };
        let l = cholesky_jitter(&cov).ok_or_else(|| npd("conditional covariance"))?.l();
        let (nm, no) = (pat.mis.len(), pat.obs.len());
        let mut diff = vec![0.0; no];
        for &i in &pat.rows {
            for (k, &j) in pat.obs.iter().enumerate() {
                diff[k] = state.y[(i, j)] - mean[(i, j)];
            }
            z.clear();
            z.extend((0..nm).map(|_| std_normal(rng)));
            for (r, &j) in pat.mis.iter().enumerate() {
                let mut v = mean[(i, j)];
                for k in 0..no {
                    v += a[(r, k)] * diff[k];
                }
                for k in 0..=r {
                    v += l[(r, k)] * z[k];
                }
                if !(v.abs() <= DIVERGENCE) {
                    return Err(ImputeError::Divergent { iteration });
                }
                state.y[(i, j)] = v;
            }
        }
    }
    Ok(())
}

fn step_beta(problem: &JmProblem, fixed: &Fixed, state: &mut JmState, rng: &mut Rng) -> Result<(), ImputeError> {
    let mut r = state.y.clone();
    add_effects(&mut r, state, problem, -1.0);
    let beta_hat = fixed.xtx_chol.solve(&problem.x.tr_mul(&r));
    let le = cholesky_jitter(&state.sigma_e).ok_or_else(|| npd("Sigma_e"))?.l();
    let (q, p) = beta_hat.shape();
    let z = DMatrix::from_fn(q, p, |_, _| std_normal(rng));
    state.beta = beta_hat + &fixed.xtx_inv_chol * z * le.transpose();
    Ok(())
}

fn step_effects(problem: &JmProblem, fixed: &Fixed, state: &mut JmState, rng: &mut Rng) -> Result<(), ImputeError> {
    let (Some(c), Some(sigma_u)) = (&problem.clusters, &state.sigma_u) else {
        return Ok(());
    };
    let p = problem.p();
    let e = &state.y - &problem.x * &state.beta;
    let k = fixed.cluster_sizes.len();
    let mut sums = DMatrix::<f64>::zeros(k, p);
    for (i, &ci) in c.iter().enumerate() {
        for j in 0..p {
            sums[(ci, j)] += e[(i, j)];
        }
    }
    let se_inv = cholesky_jitter(&state.sigma_e).ok_or_else(|| npd("Sigma_e"))?.inverse();
    let su_inv = cholesky_jitter(sigma_u).ok_or_else(|| npd("Sigma_u"))?.inverse();
    // posterior covariance depends on the cluster only through its size
    let mut by_size: HashMap<usize, (DMatrix<f64>, DMatrix<f64>)> = HashMap::new();
    for cl in 0..k {
        let nj = fixed.cluster_sizes[cl];
        if let Entry::Vacant(slot) = by_size.entry(nj) {
            let prec = &su_inv + &se_inv * nj as f64;
            let cov = cholesky_jitter(&prec)
                .ok_or_else(|| npd("random-effect precision"))?
                .inverse();
            let l = cholesky_jitter(&cov)
                .ok_or_else(|| npd("random-effect covariance"))?
                .l();
            slot.insert((cov * &se_inv, l));
        }
        let (gain, l) = &by_size[&nj];
        let s = sums.row(cl).transpose();
        let mean = gain * s;
        let z = DVector::from_fn(p, |_, _| std_normal(rng));
        let draw = mean + l * z;
        for j in 0..p {
            state.u[(cl, j)] = draw[j];
        }
    }
    Ok(())
}

fn step_sigma_e(problem: &JmProblem, state: &mut JmState, rng: &mut Rng) -> Result<(), ImputeError> {
    let p = problem.p();
    let mut resid = &state.y - &problem.x * &state.beta;
    add_effects(&mut resid, state, problem, -1.0);
    let scale = DMatrix::<f64>::identity(p, p) + resid.tr_mul(&resid);
    let df = (p + 2 + problem.n()) as f64;
    state.sigma_e = sample_inv_wishart(df, &scale, rng).ok_or_else(|| npd("Sigma_e draw"))?;
    Ok(())
}

/// Runs the sampler and returns `m` completed outcome matrices, taken at
/// iterations `n_burn`, `n_burn + n_between`, ...
pub fn run_gibbs(problem: &JmProblem, cfg: &JmConfig) -> Result<(Vec<DMatrix<f64>>, JmDiagnostics), ImputeError> {
    run_gibbs_observed(problem, cfg, |_| {})
}

/// [`run_gibbs`], handing the state to `observe` after every iteration.
pub fn run_gibbs_observed(
    problem: &JmProblem,
    cfg: &JmConfig,
    mut observe: impl FnMut(&JmState),
) -> Result<(Vec<DMatrix<f64>>, JmDiagnostics), ImputeError> {
    cfg.validate()?;
    let (n, p) = (problem.n(), problem.p());
    if problem.observed.len() != n * p || problem.x.nrows() != n {
        return Err(ImputeError::Config("inconsistent joint-model dimensions".into()));
    }
    if n < p + 2 {
        return Err(ImputeError::InsufficientRows {
            feature: "all".into(),
            observed: n,
            needed: p + 2,
        });
    }
    let mut rng = rng_from_seed(cfg.seed);
    let fixed = prepare(problem)?;
    let mut state = initial_state(problem, &fixed, &mut rng)?;
    let mut diag = JmDiagnostics::default();
    let total = cfg.n_burn + (cfg.m - 1) * cfg.n_between;
    let mut draws = Vec::with_capacity(cfg.m);
    for it in 1..=total {
        step_missing(problem, &fixed, &mut state, it, &mut rng)?;
        step_beta(problem, &fixed, &mut state, &mut rng)?;
        step_effects(problem, &fixed, &mut state, &mut rng)?;
        step_sigma_e(problem, &mut state, &mut rng)?;
        let accepted = state
            .sigma_u
            .is_some()
            .then(|| mh_update_sigma_u(&mut state, cfg.mh_step, &mut rng));
        if let Some(a) = accepted {
            diag.proposed += 1;
            diag.accepted += a as usize;
        }
        diag.trace.push(TracePoint {
            iteration: it,
            sigma_e_diag: state.sigma_e.diagonal().iter().copied().collect(),
            sigma_u_diag: state
                .sigma_u
                .as_ref()
                .map(|s| s.diagonal().iter().copied().collect())
                .unwrap_or_default(),
            accepted,
        });
        observe(&state);
        if it >= cfg.n_burn && (it - cfg.n_burn).is_multiple_of(cfg.n_between) {
            draws.push(state.y.clone());
        }
    }
    Ok((draws, diag))
}

/// Maps a dataset onto the joint-model problem for `cfg.level`. Returns the
/// problem and, for each outcome column that is a dataset feature, its
/// feature index.
fn build_problem(d: &LongitudinalDataset, cfg: &JmConfig) -> Result<(JmProblem, Vec<usize>), ImputeError> {
    let schema = d.schema();
    let n = d.len();
    let outcomes = schema.time_varying();
    let mut covariates: Vec<usize> = schema.statics();
    if cfg.use_target {
        covariates.push(schema.target_index());
    }
    let t_years = |r: usize| d.records()[r].t_days as f64 / 365.25;
    let cov_value = |r: usize, f: usize| {
        d.cell(r, f).ok_or(ImputeError::Config(format!(
            "covariate {} has missing cells",
            schema.feature(f).name
        )))
    };
    let (y_cols, x_cols): (usize, usize) = match cfg.level {
        JmLevel::Single => (outcomes.len() + covariates.len() + 1, 1),
        _ => (outcomes.len(), covariates.len() + 2),
    };
    let mut y = DMatrix::zeros(n, y_cols);
    let mut observed = vec![true; n * y_cols];
    let mut x = DMatrix::zeros(n, x_cols);
    for r in 0..n {
        for (j, &f) in outcomes.iter().enumerate() {
            match d.cell(r, f) {
                Some(v) => y[(r, j)] = v,
                None => observed[r * y_cols + j] = false,
            }
        }
        x[(r, 0)] = 1.0;
        match cfg.level {
            JmLevel::Single => {
                for (k, &f) in covariates.iter().enumerate() {
                    y[(r, outcomes.len() + k)] = cov_value(r, f)?;
                }
                y[(r, y_cols - 1)] = t_years(r);
            }
            _ => {
                for (k, &f) in covariates.iter().enumerate() {
                    x[(r, 1 + k)] = cov_value(r, f)?;
                }
                x[(r, x_cols - 1)] = t_years(r);
            }
        }
    }
    let clusters = (cfg.level == JmLevel::Clustered).then(|| {
        let mut c = vec![0; n];
        for (k, span) in d.patients().iter().enumerate() {
            for r in span.rows.clone() {
                c[r] = k;
            }
        }
        c
    });
    if cfg.level == JmLevel::Clustered && d.n_patients() < 2 {
        return Err(ImputeError::Config(
            "clustered joint model needs at least 2 patients".into(),
        ));
    }
    Ok((
        JmProblem {
            y,
            observed,
            x,
            clusters,
        },
        outcomes,
    ))
}

pub fn jm_impute(d: &LongitudinalDataset, cfg: &JmConfig) -> Result<Vec<CompletedDataset>, ImputeError> {
    Ok(jm_impute_with_diagnostics(d, cfg)?.0)
}

pub fn jm_impute_with_diagnostics(
    d: &LongitudinalDataset,
    cfg: &JmConfig,
) -> Result<(Vec<CompletedDataset>, JmDiagnostics), ImputeError> {
    let (problem, outcomes) = build_problem(d, cfg)?;
    for (j, &f) in outcomes.iter().enumerate() {
        if d.n_missing_in(f) == d.len() {
            return Err(ImputeError::InsufficientRows {
                feature: d.schema().feature(f).name.clone(),
                observed: 0,
                needed: 1,
            });
        }
        debug_assert!(j < problem.p());
    }
    let (draws, diag) = run_gibbs(&problem, cfg)?;
    let mut column_of = vec![usize::MAX; d.schema().len()];
    for (j, &f) in outcomes.iter().enumerate() {
        column_of[f] = j;
    }
    let completed = draws
        .iter()
        .enumerate()
        .map(|(k, y)| {
            CompletedDataset::fill(
                d,
                |r, f| y[(r, column_of[f])],
                Provenance {
                    method: cfg.level.id().to_string(),
                    imputation_index: k,
                    seed: cfg.seed,
                    m: 1,
                },
            )
        })
        .collect();
    Ok((completed, diag))
}
