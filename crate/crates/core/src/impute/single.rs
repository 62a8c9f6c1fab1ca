//! Per-patient, per-feature series imputation.

use serde::{Deserialize, Serialize};

use crate::error::ImputeError;

/// One patient's values of one feature over visit times.
#[derive(Debug, Clone, Copy)]
pub struct SeriesView<'a> {
    pub times: &'a [i64],
    pub values: &'a [Option<f64>],
}

impl<'a> SeriesView<'a> {
    pub fn new(times: &'a [i64], values: &'a [Option<f64>]) -> Self {
        debug_assert_eq!(times.len(), values.len());
        debug_assert!(times.windows(2).all(|w| w[0] < w[1]));
        SeriesView { times, values }
    }

    fn observed(&self) -> Vec<(usize, f64)> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
            .collect()
    }

    fn require_observed(&self) -> Result<Vec<(usize, f64)>, ImputeError> {
        let obs = self.observed();
        if obs.is_empty() {
            Err(ImputeError::NoObserved)
        } else {
            Ok(obs)
        }
    }

    fn fill_with(&self, mut f: impl FnMut(usize) -> f64) -> Vec<f64> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| match v {
                Some(x) => *x,
                None => f(i),
            })
            .collect()
    }
}

/// Linear interpolation in `t_days`; constant extension at the edges.
pub fn impute_linear(s: SeriesView<'_>) -> Result<Vec<f64>, ImputeError> {
    let obs = s.require_observed()?;
    Ok(s.fill_with(|i| linear_at(&obs, s.times, i)))
}

fn linear_at(obs: &[(usize, f64)], times: &[i64], i: usize) -> f64 {
    // first observed index after i
    let next = obs.partition_point(|&(j, _)| j < i);
    if next == 0 {
        return obs[0].1;
    }
    if next == obs.len() {
        return obs[obs.len() - 1].1;
    }
    let (j0, v0) = obs[next - 1];
    let (j1, v1) = obs[next];
    let (t0, t1, t) = (times[j0] as f64, times[j1] as f64, times[i] as f64);
    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
}

/// Natural cubic spline through the observed points (four or more),
/// linear with two or three, constant with one. Outside the observed time
/// range the boundary value is carried.
pub fn impute_spline(s: SeriesView<'_>) -> Result<Vec<f64>, ImputeError> {
    let obs = s.require_observed()?;
    if obs.len() < 4 {
        return Ok(s.fill_with(|i| linear_at(&obs, s.times, i)));
    }
    let xs: Vec<f64> = obs.iter().map(|&(j, _)| s.times[j] as f64).collect();
    let ys: Vec<f64> = obs.iter().map(|&(_, v)| v).collect();
    let spline = NaturalSpline::fit(&xs, &ys);
    let (first, last) = (obs[0].1, obs[obs.len() - 1].1);
    let (t_lo, t_hi) = (xs[0], xs[xs.len() - 1]);
    Ok(s.fill_with(|i| {
        let t = s.times[i] as f64;
        if t <= t_lo {
            first
        } else if t >= t_hi {
            last
        } else {
            spline.eval(t)
        }
    }))
}

struct NaturalSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl NaturalSpline {
    fn fit(xs: &[f64], ys: &[f64]) -> Self {
        let n = xs.len();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let mut m = vec![0.0; n];
        // tridiagonal system for interior second derivatives (Thomas algorithm)
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut upper = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for i in 0..k {
            diag[i] = 2.0 * (h[i] + h[i + 1]);
            upper[i] = h[i + 1];
            rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h[i + 1] - (ys[i + 1] - ys[i]) / h[i]);
        }
        for i in 1..k {
            let w = h[i] / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        for i in (0..k).rev() {
            let next = if i + 1 < k { m[i + 2] } else { 0.0 };
            m[i + 1] = (rhs[i] - upper[i] * next) / diag[i];
        }
        NaturalSpline {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        }
    }

    fn eval(&self, t: f64) -> f64 {
        let j = self.xs.partition_point(|&x| x <= t).clamp(1, self.xs.len() - 1) - 1;
        let (x0, x1) = (self.xs[j], self.xs[j + 1]);
        let h = x1 - x0;
        let a = (x1 - t) / h;
        let b = (t - x0) / h;
        a * self.ys[j]
            + b * self.ys[j + 1]
            + ((a * a * a - a) * self.m[j] + (b * b * b - b) * self.m[j + 1]) * h * h / 6.0
    }
}

/// Last observation carried forward; leading gaps take the first observed
/// value.
pub fn impute_locf(s: SeriesView<'_>) -> Result<Vec<f64>, ImputeError> {
    let obs = s.require_observed()?;
    let mut last = obs[0].1;
    Ok(s.values
        .iter()
        .map(|v| {
            if let Some(x) = v {
                last = *x;
            }
            last
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EwmaWeighting {
    /// `1 / 2^d` for index distance `d`.
    Index,
    /// `exp(-lambda * |days|)`.
    Days { lambda: f64 },
}

/// Two-sided weighted moving average over the `k` nearest positions on
/// each side; the window widens until it holds an observed value.
pub fn impute_ewma(s: SeriesView<'_>, k: usize, weighting: EwmaWeighting) -> Result<Vec<f64>, ImputeError> {
    if k == 0 {
        return Err(ImputeError::Config("ewma window k must be >= 1".into()));
    }
    s.require_observed()?;
    let n = s.values.len();
    Ok(s.fill_with(|i| {
        let mut width = k;
        loop {
            let lo = i.saturating_sub(width);
            let hi = (i + width).min(n - 1);
            let mut num = 0.0;
            let mut den = 0.0;
            for j in lo..=hi {
                if let Some(v) = s.values[j] {
                    let w = match weighting {
                        EwmaWeighting::Index => 0.5f64.powi(i.abs_diff(j) as i32),
                        EwmaWeighting::Days { lambda } => (-lambda * (s.times[i] - s.times[j]).abs() as f64).exp(),
                    };
                    num += w * v;
                    den += w;
                }
            }
            if den > 0.0 {
                return num / den;
            }
            width += 1;
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn run(
        f: impl Fn(SeriesView<'_>) -> Result<Vec<f64>, ImputeError>,
        times: &[i64],
        values: &[Option<f64>],
    ) -> Vec<f64> {
        f(SeriesView::new(times, values)).unwrap()
    }

    fn ewma4(s: SeriesView<'_>) -> Result<Vec<f64>, ImputeError> {
        impute_ewma(s, 4, EwmaWeighting::Index)
    }

    #[test]
    fn linear_examples() {
        assert_eq!(
            run(impute_linear, &[0, 1, 2], &[Some(0.0), None, Some(4.0)]),
            vec![0.0, 2.0, 4.0]
        );
        assert_eq!(
            run(impute_linear, &[0, 3, 4], &[Some(0.0), None, Some(4.0)]),
            vec![0.0, 3.0, 4.0]
        );
        assert_eq!(
            run(impute_linear, &[0, 1, 2], &[None, Some(2.0), None]),
            vec![2.0, 2.0, 2.0]
        );
    }

    #[test]
    fn spline_examples() {
        let t = [0, 10, 25, 40, 60];
        let line = |t: i64| 1.0 + 0.05 * t as f64;
        let vals = [Some(line(0)), Some(line(10)), None, Some(line(40)), Some(line(60))];
        let out = run(impute_spline, &t, &vals);
        assert!((out[2] - line(25)).abs() < 1e-12);

        let t = [0, 5, 9];
        let vals = [Some(1.0), None, Some(3.0)];
        assert_eq!(run(impute_spline, &t, &vals), run(impute_linear, &t, &vals));

        let t = [0, 5, 9, 14, 20, 33];
        let vals = [None, Some(2.0), Some(5.0), Some(1.0), Some(4.0), Some(3.0)];
        assert_eq!(run(impute_spline, &t, &vals)[0], 2.0);
    }

    #[test]
    fn spline_matches_known_natural_spline() {
        // points of y = x^3 at 0,1,2,3; natural spline second derivatives
        // solve [4 1; 1 4] m = 6 [6; 12] -> m1 = 4.8, m2 = 16.8
        let sp = NaturalSpline::fit(&[0.0, 1.0, 2.0, 3.0], &[0.0, 1.0, 8.0, 27.0]);
        assert!((sp.m[1] - 4.8).abs() < 1e-12 && (sp.m[2] - 16.8).abs() < 1e-12);
        let mid = sp.eval(1.5);
        let expected = 0.5 * 1.0 + 0.5 * 8.0 + ((0.125 - 0.5) * 4.8 + (0.125 - 0.5) * 16.8) / 6.0;
        assert!((mid - expected).abs() < 1e-12);
    }

    #[test]
    fn locf_examples() {
        assert_eq!(
            run(impute_locf, &[0, 1, 2, 3], &[Some(1.0), None, None, Some(3.0)]),
            vec![1.0, 1.0, 1.0, 3.0]
        );
        assert_eq!(
            run(impute_locf, &[0, 1, 2], &[None, Some(2.0), None]),
            vec![2.0, 2.0, 2.0]
        );
        let complete = [Some(1.0), Some(5.0), Some(2.0)];
        assert_eq!(run(impute_locf, &[0, 1, 2], &complete), vec![1.0, 5.0, 2.0]);
    }

    #[test]
    fn ewma_examples() {
        assert_eq!(run(ewma4, &[0, 1, 2], &[Some(1.0), None, Some(3.0)])[1], 2.0);
        let v = run(ewma4, &[0, 1, 2], &[Some(1.0), Some(2.0), None])[2];
        assert!((v - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(run(ewma4, &[0, 1, 2], &[Some(5.0), None, Some(5.0)])[1], 5.0);
    }

    #[test]
    fn ewma_window_expands() {
        let mut vals = vec![None; 12];
        vals[0] = Some(7.0);
        let t: Vec<i64> = (0..12).collect();
        let out = run(ewma4, &t, &vals);
        assert!(out.iter().all(|&v| v == 7.0));
        assert!(impute_ewma(SeriesView::new(&t, &vals), 0, EwmaWeighting::Index).is_err());
    }

    #[test]
    fn ewma_day_weights() {
        let t = [0, 10, 100];
        let vals = [Some(0.0), None, Some(9.0)];
        let out = impute_ewma(SeriesView::new(&t, &vals), 4, EwmaWeighting::Days { lambda: 0.01 }).unwrap();
        let (w0, w2) = ((-0.1f64).exp(), (-0.9f64).exp());
        assert!((out[1] - 9.0 * w2 / (w0 + w2)).abs() < 1e-12);
    }

    #[test]
    fn all_missing_is_an_error() {
        let t = [0, 1];
        let v = [None, None];
        let s = SeriesView::new(&t, &v);
        assert_eq!(impute_linear(s), Err(ImputeError::NoObserved));
        assert_eq!(impute_spline(s), Err(ImputeError::NoObserved));
        assert_eq!(impute_locf(s), Err(ImputeError::NoObserved));
        assert_eq!(impute_ewma(s, 4, EwmaWeighting::Index), Err(ImputeError::NoObserved));
    }

    #[test]
    fn single_observation_gives_constant_series() {
        let t = [0, 4, 9, 12];
        let v = [None, Some(3.5), None, None];
        let s = SeriesView::new(&t, &v);
        for out in [
            impute_linear(s).unwrap(),
            impute_spline(s).unwrap(),
            impute_locf(s).unwrap(),
            impute_ewma(s, 4, EwmaWeighting::Index).unwrap(),
        ] {
            assert_eq!(out, vec![3.5; 4]);
        }
    }

    fn arb_series() -> impl Strategy<Value = (Vec<i64>, Vec<Option<f64>>)> {
        proptest::collection::vec((1i64..200, proptest::option::weighted(0.6, 0.0f64..6.0)), 1..30)
            .prop_filter("needs an observation", |v| v.iter().any(|x| x.1.is_some()))
            .prop_map(|v| {
                let mut t = 0;
                let mut times = Vec::new();
                let mut vals = Vec::new();
                for (gap, x) in v {
                    times.push(t);
                    t += gap;
                    vals.push(x);
                }
                (times, vals)
            })
    }

    proptest! {
        #[test]
        fn observed_cells_preserved_and_idempotent((times, vals) in arb_series()) {
            let s = SeriesView::new(&times, &vals);
            let outs = [
                impute_linear(s).unwrap(),
                impute_spline(s).unwrap(),
                impute_locf(s).unwrap(),
                impute_ewma(s, 4, EwmaWeighting::Index).unwrap(),
            ];
            for out in &outs {
                for (o, v) in out.iter().zip(&vals) {
                    if let Some(v) = v {
                        prop_assert_eq!(o.to_bits(), v.to_bits());
                    }
                }
                let complete: Vec<Option<f64>> = out.iter().map(|&x| Some(x)).collect();
                let again = impute_linear(SeriesView::new(&times, &complete)).unwrap();
                prop_assert_eq!(&again, out);
            }
        }

        #[test]
        fn locf_and_ewma_stay_within_observed_range((times, vals) in arb_series()) {
            let s = SeriesView::new(&times, &vals);
            let obs: Vec<f64> = vals.iter().flatten().copied().collect();
            let lo = obs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = obs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for out in [impute_locf(s).unwrap(), impute_ewma(s, 4, EwmaWeighting::Index).unwrap()] {
                for x in out {
                    prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn linear_recovers_affine_interior(
            (times, vals) in arb_series(),
            a in -0.05f64..0.05,
            b in -3.0f64..3.0,
        ) {
            let truth: Vec<f64> = times.iter().map(|&t| a * t as f64 + b).collect();
            let masked: Vec<Option<f64>> = vals.iter().zip(&truth).map(|(v, &x)| v.map(|_| x)).collect();
            let s = SeriesView::new(&times, &masked);
            let out = impute_linear(s).unwrap();
            let first = masked.iter().position(Option::is_some).unwrap();
            let last = masked.iter().rposition(Option::is_some).unwrap();
            for i in first..=last {
                prop_assert!((out[i] - truth[i]).abs() < 1e-9);
            }
        }
    }
}
