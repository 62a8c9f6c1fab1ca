//! Epsilon-SVR with an RBF kernel, solved by pairwise (SMO) updates on the
//! 2n-variable dual with second-order working-set selection.
//!
//! Dual variables `a[0..n]` are the alphas and `a[n..2n]` the alpha-stars.
//! With `s_t = +1` for `t < n` and `-1` otherwise, the problem is
//! `min 1/2 a'Qa + q'a` with `Q_tu = s_t s_u K(x_t, x_u)`,
//! `q_t = epsilon - s_t y_t`, `s'a = 0` and `0 <= a <= C`.

use nalgebra::DMatrix;
use rand::seq::index;
use serde_json::json;

use crate::error::PredictError;
use crate::predict::{FeatureMatrix, Model};
use crate::rng::derive_rng;

/// Rows beyond this are not given a full kernel matrix.
const FULL_KERNEL_ROWS: usize = 4000;
/// Curvature floor for non-positive second-order terms.
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    pub gamma: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    /// Iteration budget in units of `2n` pair updates.
    pub max_passes: usize,
    /// Larger training sets are subsampled to this many rows.
    pub max_train_rows: usize,
}

#[derive(Debug, Clone)]
pub struct Svr {
    /// Training rows, row-major.
    rows: Vec<f64>,
    p: usize,
    alpha: Vec<f64>,
    alpha_star: Vec<f64>,
    b: f64,
    gamma: f64,
    converged: bool,
    iterations: usize,
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
    (-gamma * d).exp()
}

enum Kernel {
    Full(Vec<f64>),
    OnDemand,
}

struct Problem<'a> {
    rows: &'a [f64],
    p: usize,
    n: usize,
    gamma: f64,
    kernel: Kernel,
}

impl Problem<'_> {
    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.p..(i + 1) * self.p]
    }

    /// Kernel row of training point `i` into `out`.
    fn kernel_row(&self, i: usize, out: &mut Vec<f64>) {
        out.clear();
        match &self.kernel {
            Kernel::Full(k) => out.extend_from_slice(&k[i * self.n..(i + 1) * self.n]),
            Kernel::OnDemand => out.extend((0..self.n).map(|j| rbf(self.row(i), self.row(j), self.gamma))),
        }
    }
}

struct Solution {
    a: Vec<f64>,
    grad: Vec<f64>,
    converged: bool,
    iterations: usize,
}

fn sign(t: usize, n: usize) -> f64 {
    if t < n {
        1.0
    } else {
        -1.0
    }
}

fn solve(prob: &Problem<'_>, y: &[f64], params: &SvrParams) -> Solution {
    let n = prob.n;
    let l = 2 * n;
    let c = params.c;
    let mut a = vec![0.0; l];
    let mut grad: Vec<f64> = (0..l).map(|t| params.epsilon - sign(t, n) * y[t % n]).collect();
    let max_iter = params.max_passes.saturating_mul(l).max(1);
    let (mut ki, mut kj) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // i maximizes -s_t G_t over variables that can move up along s
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if a[t] < c && -grad[t] > gmax {
                gmax = -grad[t];
                i = t;
            }
        }
        for t in n..l {
            if a[t] > 0.0 && grad[t] > gmax {
                gmax = grad[t];
                i = t;
            }
        }
        if i == usize::MAX {
            converged = true;
            break;
        }
        prob.kernel_row(i % n, &mut ki);
        let si = sign(i, n);
        // j minimizes the second-order objective decrease over variables
        // that can move down
        let mut gmax2 = f64::NEG_INFINITY;
        let mut obj_min = f64::INFINITY;
        let mut j = usize::MAX;
        for t in 0..l {
            let (down, v, k) = if t < n {
                (a[t] > 0.0, grad[t], ki[t])
            } else {
                (a[t] < c, -grad[t], ki[t - n])
            };
            if !down {
                continue;
            }
            gmax2 = gmax2.max(v);
            let diff = gmax + v;
            if diff > 0.0 {
                // K_ii + K_tt - 2 K_it with unit kernel diagonal
                let quad = (2.0 - 2.0 * k).max(TAU);
                let obj = -diff * diff / quad;
                if obj < obj_min {
                    obj_min = obj;
                    j = t;
                }
            }
        }
        if gmax + gmax2 < params.tol || j == usize::MAX {
            converged = true;
            break;
        }
        iterations += 1;
        prob.kernel_row(j % n, &mut kj);
        let sj = sign(j, n);
        let q_ij = si * sj * ki[j % n];
        let (old_i, old_j) = (a[i], a[j]);
        if si != sj {
            let quad = (2.0 + 2.0 * q_ij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = a[i] - a[j];
            a[i] += delta;
            a[j] += delta;
            if diff > 0.0 {
                if a[j] < 0.0 {
                    a[j] = 0.0;
                    a[i] = diff;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = -diff;
            }
            if diff > 0.0 {
                if a[i] > c {
                    a[i] = c;
                    a[j] = c - diff;
                }
            } else if a[j] > c {
                a[j] = c;
                a[i] = c + diff;
            }
        } else {
            let quad = (2.0 - 2.0 * q_ij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = a[i] + a[j];
            a[i] -= delta;
            a[j] += delta;
            if sum > c {
                if a[i] > c {
                    a[i] = c;
                    a[j] = sum - c;
                }
            } else if a[j] < 0.0 {
                a[j] = 0.0;
                a[i] = sum;
            }
            if sum > c {
                if a[j] > c {
                    a[j] = c;
                    a[i] = sum - c;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = sum;
            }
        }
        let (di, dj) = (si * (a[i] - old_i), sj * (a[j] - old_j));
        let (gp, gn) = grad.split_at_mut(n);
        for t in 0..n {
            let step = ki[t] * di + kj[t] * dj;
            gp[t] += step;
            gn[t] -= step;
        }
    }
    Solution {
        a,
        grad,
        converged,
        iterations,
    }
}

/// Offset `b` from the KKT conditions: the mean over free variables, else
/// the midpoint of the feasible interval.
fn offset(sol: &Solution, n: usize, c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..2 * n {
        let st = sign(t, n);
        let yg = st * sol.grad[t];
        let at_upper = sol.a[t] >= c;
        let at_lower = sol.a[t] <= 0.0;
        if at_upper {
            if st < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if st > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        0.5 * (ub + lb)
    };
    -rho
}

pub fn fit_svr(train: &FeatureMatrix, params: &SvrParams, seed: u64) -> Result<Svr, PredictError> {
    if !(params.c > 0.0) || !(params.epsilon >= 0.0) || !(params.gamma > 0.0) || !(params.tol > 0.0) {
        return Err(PredictError::Hyper(
            "svr needs c > 0, epsilon >= 0, gamma > 0, tol > 0".into(),
        ));
    }
    let n_all = train.n_rows();
    if n_all == 0 {
        return Err(PredictError::Precondition("no training rows".into()));
    }
    let keep: Vec<usize> = if n_all > params.max_train_rows {
        let mut rng = derive_rng(seed, "svr/subsample");
        let mut v = index::sample(&mut rng, n_all, params.max_train_rows).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n_all).collect()
    };
    let n = keep.len();
    let p = train.n_features();
    let mut rows = Vec::with_capacity(n * p);
    for &i in &keep {
        rows.extend(train.x.row(i).iter());
    }
    let y: Vec<f64> = keep.iter().map(|&i| train.y[i]).collect();
    let mut prob = Problem {
        rows: &rows,
        p,
        n,
        gamma: params.gamma,
        kernel: Kernel::OnDemand,
    };
    if n <= FULL_KERNEL_ROWS {
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            k[i * n + i] = 1.0;
            for j in 0..i {
                let v = rbf(prob.row(i), prob.row(j), params.gamma);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        prob.kernel = Kernel::Full(k);
    }
    let sol = solve(&prob, &y, params);
    let b = offset(&sol, n, params.c);
    let (alpha, alpha_star) = (sol.a[..n].to_vec(), sol.a[n..].to_vec());
    Ok(Svr {
        rows,
        p,
        alpha,
        alpha_star,
        b,
        gamma: params.gamma,
        converged: sol.converged,
        iterations: sol.iterations,
    })
}

impl Svr {
    /// `(alpha, alpha_star)` over the (possibly subsampled) training rows.
    pub fn duals(&self) -> (&[f64], &[f64]) {
        (&self.alpha, &self.alpha_star)
    }

    pub fn offset(&self) -> f64 {
        self.b
    }

    /// False when the iteration budget ran out before the KKT tolerance.
    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn n_support(&self) -> usize {
        self.alpha
            .iter()
            .zip(&self.alpha_star)
            .filter(|(a, s)| *a - *s != 0.0)
            .count()
    }

    fn decision(&self, q: &[f64]) -> f64 {
        let mut f = self.b;
        for (i, (a, s)) in self.alpha.iter().zip(&self.alpha_star).enumerate() {
            let coef = a - s;
            if coef != 0.0 {
                f += coef * rbf(&self.rows[i * self.p..(i + 1) * self.p], q, self.gamma);
            }
        }
        f
    }
}

impl Model for Svr {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut q = vec![0.0; self.p];
        (0..x.nrows())
            .map(|i| {
                for (j, v) in q.iter_mut().enumerate() {
                    *v = x[(i, j)];
                }
                self.decision(&q)
            })
            .collect()
    }

    fn summary(&self) -> serde_json::Value {
        json!({
            "kind": "svr",
            "n_train": self.alpha.len(),
            "n_support": self.n_support(),
            "converged": self.converged,
            "iterations": self.iterations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    fn fm(x: DMatrix<f64>, y: Vec<f64>) -> FeatureMatrix {
        let (n, p) = x.shape();
        FeatureMatrix {
            x,
            y,
            columns: (0..p).map(|j| format!("c{j}")).collect(),
            patients: vec!["p".into(); n],
        }
    }

    fn params(c: f64, epsilon: f64, gamma: f64) -> SvrParams {
        SvrParams {
            c,
            epsilon,
            gamma,
            tol: 1e-3,
            max_passes: 100,
            max_train_rows: 2000,
        }
    }

    fn random_problem(n: usize, seed: u64) -> FeatureMatrix {
        let mut rng = rng_from_seed(seed);
        let x: DMatrix<f64> = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.5..1.5));
        let y = (0..n)
            .map(|i| 2.0 * x[(i, 0)].sin() + x[(i, 1)] * x[(i, 2)] + rng.random_range(-0.3..0.3))
            .collect();
        fm(x, y)
    }

    #[test]
    fn constant_targets() {
        let x = DMatrix::from_fn(20, 2, |i, j| (i * (j + 1)) as f64 * 0.1);
        let m = fit_svr(&fm(x.clone(), vec![4.0; 20]), &params(1.0, 0.1, 0.5), 0).unwrap();
        assert!(m.duals().0.iter().chain(m.duals().1).all(|&a| a == 0.0));
        assert_eq!(m.offset(), 4.0);
        assert!(m.predict(&x).iter().all(|&v| v == 4.0));
    }

    #[test]
    fn line_fits_inside_tube() {
        let n = 40;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64);
        let y: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * x[(i, 0)]).collect();
        let m = fit_svr(&fm(x.clone(), y.clone()), &params(100.0, 0.05, 1.0), 0).unwrap();
        assert!(m.converged());
        for (p, t) in m.predict(&x).iter().zip(&y) {
            assert!((p - t).abs() <= 0.05 + 1e-3, "{p} vs {t}");
        }
    }

    #[test]
    fn kkt_conditions_hold_at_convergence() {
        for seed in 0..5 {
            let d = random_problem(150, seed);
            let pr = params(2.0, 0.1, 0.5);
            let m = fit_svr(&d, &pr, 0).unwrap();
            assert!(m.converged());
            let (a, s) = m.duals();
            let balance: f64 = a.iter().zip(s).map(|(x, y)| x - y).sum();
            assert!(balance.abs() < pr.tol, "balance {balance}");
            assert!(a.iter().chain(s).all(|&v| (0.0..=pr.c).contains(&v)));
            let pred = m.predict(&d.x);
            for i in 0..d.n_rows() {
                let r = d.y[i] - pred[i];
                if a[i] == 0.0 && s[i] == 0.0 {
                    assert!(r.abs() <= pr.epsilon + pr.tol, "seed {seed} row {i}: {r}");
                }
                if a[i] > 0.0 && a[i] < pr.c {
                    assert!((r - pr.epsilon).abs() <= pr.tol, "free alpha row {i}: {r}");
                }
                if s[i] > 0.0 && s[i] < pr.c {
                    assert!((r + pr.epsilon).abs() <= pr.tol, "free alpha* row {i}: {r}");
                }
            }
        }
    }

    #[test]
    fn subsampling_is_deterministic_and_generalizes() {
        let d = random_problem(600, 9);
        let mut pr = params(10.0, 0.1, 0.5);
        pr.max_train_rows = 300;
        let m1 = fit_svr(&d, &pr, 3).unwrap();
        let m2 = fit_svr(&d, &pr, 3).unwrap();
        assert_eq!(m1.duals().0.len(), 300);
        let test = random_problem(200, 10);
        let p1 = m1.predict(&test.x);
        assert_eq!(p1, m2.predict(&test.x));
        assert!(crate::metrics::r2_of(&test.y, &p1).unwrap() > 0.7);
    }

    #[test]
    fn iteration_budget_sets_warning_flag() {
        let d = random_problem(100, 11);
        let mut pr = params(10.0, 0.01, 2.0);
        pr.max_passes = 1;
        pr.tol = 1e-9;
        let m = fit_svr(&d, &pr, 0).unwrap();
        assert!(!m.converged());
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let d = random_problem(10, 12);
        assert!(fit_svr(&d, &params(0.0, 0.1, 1.0), 0).is_err());
        assert!(fit_svr(&d, &params(1.0, -0.1, 1.0), 0).is_err());
        assert!(fit_svr(&d, &params(1.0, 0.1, 0.0), 0).is_err());
    }
}
