//! Dense linear-algebra helpers shared by the regression kernels and the
//! joint-model sampler.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::rng::Rng;

/// Condition number above which normal equations get a ridge term.
pub const RIDGE_CONDITION: f64 = 1e12;
const JITTER: f64 = 1e-8;

pub fn std_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn std_normal_vec(n: usize, rng: &mut Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| std_normal(rng))
}

/// Eigenvalue condition number of a symmetric matrix; infinite when it is
/// not positive definite.
pub fn condition_number(sym: &DMatrix<f64>) -> f64 {
    let eig = sym.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Cholesky factorization, retrying once with `1e-8 * I` added.
pub fn cholesky_jitter(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(c) = sym.clone().cholesky() {
        return Some(c);
    }
    let n = m.nrows();
    (sym + DMatrix::identity(n, n) * JITTER).cholesky()
}

pub fn is_spd(m: &DMatrix<f64>) -> bool {
    m.clone().cholesky().is_some()
}

/// Ordinary least squares with the ridge fallback on ill-conditioned
/// normal equations.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub beta: DVector<f64>,
    /// Lower Cholesky factor of `(X'X [+ ridge])^-1`.
    pub cov_unscaled_chol: DMatrix<f64>,
    pub residual_ss: f64,
    pub n: usize,
    pub p: usize,
    pub ridge: f64,
}

impl LeastSquares {
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<Self> {
        let (n, p) = x.shape();
        let mut xtx = x.tr_mul(x);
        let xty = x.tr_mul(y);
        let mut ridge = 0.0;
        if condition_number(&xtx) > RIDGE_CONDITION {
            ridge = 1e-6 * xtx.trace() / p as f64;
            if ridge <= 0.0 || !ridge.is_finite() {
                return None;
            }
            for i in 0..p {
                xtx[(i, i)] += ridge;
            }
        }
        let chol = xtx.cholesky()?;
        let beta = chol.solve(&xty);
        let inv = chol.inverse();
        let cov_unscaled_chol = cholesky_jitter(&inv)?.l();
        let resid = y - x * &beta;
        Some(LeastSquares {
            beta,
            cov_unscaled_chol,
            residual_ss: resid.norm_squared(),
            n,
            p,
            ridge,
        })
    }

    /// Residual degrees of freedom, at least one.
    pub fn dof(&self) -> usize {
        self.n.saturating_sub(self.p).max(1)
    }

    pub fn sigma2_hat(&self) -> f64 {
        self.residual_ss / self.dof() as f64
    }

    /// Posterior draw `(beta*, sigma*)` under the flat prior: sigma^2 from
    /// `SSR / chi2(n - p)`, beta from `N(beta_hat, sigma^2 (X'X)^-1)`.
    pub fn posterior_draw(&self, rng: &mut Rng) -> (DVector<f64>, f64) {
        let chi = ChiSquared::new(self.dof() as f64).expect("positive dof");
        let c: f64 = chi.sample(rng);
        let sigma = (self.residual_ss / c.max(f64::MIN_POSITIVE)).sqrt();
        let z = std_normal_vec(self.p, rng);
        let beta = &self.beta + (&self.cov_unscaled_chol * z) * sigma;
        (beta, sigma)
    }
}

/// Draw from `N(mean, L L')`.
pub fn mvn_draw(mean: &DVector<f64>, chol_lower: &DMatrix<f64>, rng: &mut Rng) -> DVector<f64> {
    mean + chol_lower * std_normal_vec(mean.len(), rng)
}

/// Wishart(df, scale) draw by the Bartlett decomposition, given the lower
/// Cholesky factor of the scale matrix.
pub fn sample_wishart(df: f64, scale_chol: &DMatrix<f64>, rng: &mut Rng) -> DMatrix<f64> {
    let p = scale_chol.nrows();
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(df - i as f64).expect("df > p - 1");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = std_normal(rng);
        }
    }
    let la = scale_chol * a;
    &la * la.transpose()
}

/// Inverse-Wishart(df, psi) draw: the inverse of Wishart(df, psi^-1).
pub fn sample_inv_wishart(df: f64, psi: &DMatrix<f64>, rng: &mut Rng) -> Option<DMatrix<f64>> {
    let psi_inv = cholesky_jitter(psi)?.inverse();
    let scale_chol = cholesky_jitter(&psi_inv)?.l();
    let w = sample_wishart(df, &scale_chol, rng);
    let inv = cholesky_jitter(&w)?.inverse();
    Some((&inv + inv.transpose()) * 0.5)
}

/// Uniform index in `0..n`.
pub fn uniform_index(n: usize, rng: &mut Rng) -> usize {
    rng.random_range(0..n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn ols_recovers_exact_line() {
        let x = DMatrix::from_fn(20, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(20, |i, _| 3.0 - 0.5 * i as f64);
        let fit = LeastSquares::fit(&x, &y).unwrap();
        assert!((fit.beta[0] - 3.0).abs() < 1e-10);
        assert!((fit.beta[1] + 0.5).abs() < 1e-10);
        assert_eq!(fit.ridge, 0.0);
        assert!(fit.residual_ss < 1e-18);
    }

    #[test]
    fn ridge_engages_on_collinear_columns() {
        let x = DMatrix::from_fn(10, 3, |i, j| match j {
            0 => 1.0,
            _ => i as f64,
        });
        let y = DVector::from_fn(10, |i, _| i as f64);
        let fit = LeastSquares::fit(&x, &y).unwrap();
        assert!(fit.ridge > 0.0);
        assert!(fit.beta.iter().all(|b| b.is_finite()));
        let well = DMatrix::from_fn(10, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        assert_eq!(LeastSquares::fit(&well, &y).unwrap().ridge, 0.0);
    }

    #[test]
    fn wishart_mean_matches_df_times_scale() {
        let mut rng = rng_from_seed(1);
        let scale = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let l = scale.clone().cholesky().unwrap().l();
        let n = 4000;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            acc += sample_wishart(5.0, &l, &mut rng);
        }
        acc /= n as f64;
        let expected = scale * 5.0;
        for (a, e) in acc.iter().zip(expected.iter()) {
            assert!((a - e).abs() < 0.25, "{a} vs {e}");
        }
    }

    #[test]
    fn inverse_wishart_draws_are_spd() {
        let mut rng = rng_from_seed(2);
        let psi = DMatrix::<f64>::identity(4, 4);
        for _ in 0..100 {
            let s = sample_inv_wishart(6.0, &psi, &mut rng).unwrap();
            assert!(is_spd(&s));
        }
    }
}
