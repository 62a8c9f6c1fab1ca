//! Synthetic MS-like cohorts with known ground truth.
//!
//! EDSS is a stylized function of the sub-scores, not the clinical scoring
//! rules.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    apply_mask, registry_rates, FeatureSchema, LongitudinalDataset, MaskPlan, Mechanism, VisitRecord, EDSS_DOMAIN,
    FS_NAMES, MAX_RATE,
};
use crate::error::DataError;
use crate::linalg::std_normal;
use crate::rng::{derive_rng, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Trajectory {
    /// Straight segments between at most one interior knot.
    #[default]
    PiecewiseLinear,
    /// Correlated random walk plus measurement noise.
    RandomWalk,
    /// Per-patient intercepts and slopes from a compound-symmetry normal.
    MvnLatent,
}

impl std::str::FromStr for Trajectory {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, DataError> {
        match s {
            "piecewise_linear" => Ok(Trajectory::PiecewiseLinear),
            "random_walk" => Ok(Trajectory::RandomWalk),
            "mvn_latent" => Ok(Trajectory::MvnLatent),
            other => Err(DataError::Invalid(format!("unknown trajectory {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortGenConfig {
    pub n_patients: usize,
    pub visits_per_patient: (usize, usize),
    pub visit_gap_days: (i64, i64),
    pub trajectory: Trajectory,
    pub noise_sd: f64,
    pub edss_noise_sd: f64,
    pub missing_rates: BTreeMap<String, f64>,
    pub seed: u64,
}

impl Default for CohortGenConfig {
    fn default() -> Self {
        CohortGenConfig {
            n_patients: 919,
            visits_per_patient: (10, 20),
            visit_gap_days: (60, 365),
            trajectory: Trajectory::PiecewiseLinear,
            noise_sd: 0.3,
            edss_noise_sd: 0.3,
            missing_rates: registry_rates(),
            seed: 0,
        }
    }
}

impl CohortGenConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Invalid(m.to_string()));
        if self.n_patients == 0 {
            return bad("n_patients must be >= 1");
        }
        let (vmin, vmax) = self.visits_per_patient;
        if vmin == 0 || vmin > vmax {
            return bad("visits_per_patient must satisfy 1 <= min <= max");
        }
        let (gmin, gmax) = self.visit_gap_days;
        if gmin <= 0 || gmin > gmax {
            return bad("visit_gap_days must satisfy 0 < min <= max");
        }
        if !(self.noise_sd >= 0.0 && self.edss_noise_sd >= 0.0) {
            return bad("noise standard deviations must be >= 0");
        }
        for (f, &r) in &self.missing_rates {
            if !(0.0..=MAX_RATE).contains(&r) {
                return Err(DataError::BadRate {
                    feature: f.clone(),
                    rate: r,
                });
            }
        }
        Ok(())
    }
}

/// Population centre and spread of each sub-score's baseline level.
fn fs_scale(f: usize) -> (f64, f64, f64) {
    // (mean, sd, domain upper bound)
    if FS_NAMES[f] == "deambulation" {
        (4.0, 2.6, 12.0)
    } else {
        (2.2, 1.2, 6.0)
    }
}

fn round_half(x: f64) -> f64 {
    (x * 2.0).round() / 2.0
}

/// Stylized EDSS from the eight sub-scores, before noise and rounding.
pub fn edss_signal(fs: &[f64; 8]) -> f64 {
    let deamb = fs[7];
    let others = &fs[..7];
    let max = others.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = others.iter().sum::<f64>() / 7.0;
    0.55 * deamb + 0.30 * max + 0.15 * mean
}

pub fn edss_from_fs(fs: &[f64; 8], noise: f64) -> f64 {
    EDSS_DOMAIN.clamp(round_half(edss_signal(fs) + noise))
}

fn visit_times(cfg: &CohortGenConfig, rng: &mut Rng) -> Vec<i64> {
    let (vmin, vmax) = cfg.visits_per_patient;
    let n = rng.random_range(vmin..=vmax);
    let (gmin, gmax) = cfg.visit_gap_days;
    let mut t = 0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            t += rng.random_range(gmin..=gmax);
        }
        out.push(t);
    }
    out
}

fn years(t: i64) -> f64 {
    t as f64 / 365.25
}

/// Sub-score series `[feature][visit]`, noise-free where the mode allows.
fn trajectories(cfg: &CohortGenConfig, times: &[i64], rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = times.len();
    let span = years(*times.last().expect("at least one visit")).max(1e-9);
    let severity = std_normal(rng);
    let progression = std_normal(rng);
    match cfg.trajectory {
        Trajectory::PiecewiseLinear => {
            let knot = (n >= 3 && rng.random::<f64>() < 0.5).then(|| rng.random_range(1..n - 1));
            (0..8)
                .map(|f| {
                    let (mean, sd, hi) = fs_scale(f);
                    let start = (mean + sd * (0.7 * severity + 0.7 * std_normal(rng))).clamp(0.0, hi);
                    let slope = sd * 0.12 * (0.6 * progression + 0.8 * std_normal(rng) + 0.5);
                    let end = (start + slope * span).clamp(0.0, hi);
                    let mut anchors = vec![(0usize, start)];
                    if let Some(k) = knot {
                        let frac = years(times[k]) / span;
                        let mid = start + frac * (end - start) + 0.4 * sd * std_normal(rng);
                        anchors.push((k, mid.clamp(0.0, hi)));
                    }
                    anchors.push((n - 1, end));
                    let mut v = vec![0.0; n];
                    for w in anchors.windows(2) {
                        let ((i0, y0), (i1, y1)) = (w[0], w[1]);
                        let (t0, t1) = (times[i0] as f64, times[i1] as f64);
                        for i in i0..=i1 {
                            v[i] = if i1 == i0 {
                                y0
                            } else {
                                y0 + (y1 - y0) * (times[i] as f64 - t0) / (t1 - t0)
                            };
                        }
                    }
                    v
                })
                .collect()
        }
        Trajectory::RandomWalk => {
            let mut levels: Vec<f64> = (0..8)
                .map(|f| {
                    let (mean, sd, hi) = fs_scale(f);
                    (mean + sd * (0.7 * severity + 0.7 * std_normal(rng))).clamp(0.0, hi)
                })
                .collect();
            let mut out = vec![vec![0.0; n]; 8];
            for i in 0..n {
                if i > 0 {
                    let dt = years(times[i] - times[i - 1]);
                    let common = std_normal(rng);
                    for (f, level) in levels.iter_mut().enumerate() {
                        let (_, sd, hi) = fs_scale(f);
                        let step = sd * 0.45 * dt.sqrt() * (0.6 * common + 0.8 * std_normal(rng));
                        *level = (*level + 0.08 * sd * dt + step).clamp(0.0, hi);
                    }
                }
                for f in 0..8 {
                    out[f][i] = levels[f];
                }
            }
            out
        }
        Trajectory::MvnLatent => {
            // compound symmetry with correlation 0.4: shared + own factors
            let (a, b) = (0.4f64.sqrt(), 0.6f64.sqrt());
            let shared_slope = std_normal(rng);
            (0..8)
                .map(|f| {
                    let (mean, sd, hi) = fs_scale(f);
                    let intercept = mean + sd * (a * severity + b * std_normal(rng));
                    let slope = 0.15 * sd * (a * shared_slope + b * std_normal(rng) + 0.5);
                    times
                        .iter()
                        .map(|&t| (intercept + slope * years(t)).clamp(0.0, hi))
                        .collect()
                })
                .collect()
        }
    }
}

fn patient_records(cfg: &CohortGenConfig, index: usize) -> Vec<VisitRecord> {
    let mut rng = derive_rng(cfg.seed, &format!("patient/{index}"));
    let sex = f64::from(rng.random::<f64>() < 0.5);
    let age0 = (38.0 + 11.0 * std_normal(&mut rng)).clamp(18.0, 80.0);
    let pediatric = f64::from(rng.random::<f64>() < 0.05);
    let times = visit_times(cfg, &mut rng);
    let series = trajectories(cfg, &times, &mut rng);
    let id = format!("P{:05}", index + 1);
    times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut fs = [0.0; 8];
            for f in 0..8 {
                let (_, _, hi) = fs_scale(f);
                let noise = if cfg.noise_sd > 0.0 {
                    cfg.noise_sd * std_normal(&mut rng)
                } else {
                    0.0
                };
                fs[f] = (series[f][i] + noise).clamp(0.0, hi);
            }
            let e_noise = if cfg.edss_noise_sd > 0.0 {
                cfg.edss_noise_sd * std_normal(&mut rng)
            } else {
                0.0
            };
            let mut values = vec![Some(sex), Some((age0 + years(t)).min(100.0)), Some(pediatric)];
            values.extend(fs.iter().map(|&v| Some(v)));
            values.push(Some(edss_from_fs(&fs, e_noise)));
            VisitRecord {
                patient_id: id.clone(),
                t_days: t,
                values,
            }
        })
        .collect()
}

/// A fully observed cohort and an identical copy kept as ground truth.
pub fn generate_cohort(cfg: &CohortGenConfig) -> Result<(LongitudinalDataset, LongitudinalDataset), DataError> {
    cfg.validate()?;
    let records: Vec<VisitRecord> = (0..cfg.n_patients)
        .into_par_iter()
        .map(|i| patient_records(cfg, i))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let d = LongitudinalDataset::new(FeatureSchema::ms_default(), records)?;
    Ok((d.clone(), d))
}

/// Masks a complete cohort; see [`apply_mask`].
pub fn degrade(
    complete: &LongitudinalDataset,
    rates: &BTreeMap<String, f64>,
    mechanism: Mechanism,
    seed: u64,
) -> Result<(LongitudinalDataset, MaskPlan), DataError> {
    apply_mask(complete, rates, mechanism, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(trajectory: Trajectory, noise: f64, seed: u64) -> CohortGenConfig {
        CohortGenConfig {
            n_patients: 60,
            trajectory,
            noise_sd: noise,
            edss_noise_sd: noise,
            seed,
            ..CohortGenConfig::default()
        }
    }

    #[test]
    fn default_scale() {
        let (d, truth) = generate_cohort(&CohortGenConfig::default()).unwrap();
        assert_eq!(d.n_patients(), 919);
        assert!((9190..=18380).contains(&d.len()), "{}", d.len());
        assert_eq!(d, truth);
        assert!(d.is_complete());
    }

    #[test]
    fn deterministic_per_seed() {
        for t in [
            Trajectory::PiecewiseLinear,
            Trajectory::RandomWalk,
            Trajectory::MvnLatent,
        ] {
            let a = generate_cohort(&small(t, 0.3, 4)).unwrap().0;
            let b = generate_cohort(&small(t, 0.3, 4)).unwrap().0;
            let c = generate_cohort(&small(t, 0.3, 5)).unwrap().0;
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn noiseless_piecewise_linear_has_at_most_one_break() {
        let (d, _) = generate_cohort(&small(Trajectory::PiecewiseLinear, 0.0, 1)).unwrap();
        for span in d.patients() {
            let rows: Vec<usize> = span.rows.clone().collect();
            for f in 3..11 {
                let pts: Vec<(f64, f64)> = rows
                    .iter()
                    .map(|&r| (d.records()[r].t_days as f64, d.cell(r, f).unwrap()))
                    .collect();
                // count interior points where the slope changes
                let breaks = pts
                    .windows(3)
                    .filter(|w| {
                        let s1 = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
                        let s2 = (w[2].1 - w[1].1) / (w[2].0 - w[1].0);
                        (s1 - s2).abs() > 1e-9
                    })
                    .count();
                assert!(breaks <= 1, "{} feature {f}: {breaks} breaks", span.patient_id);
            }
        }
    }

    #[test]
    fn edss_recomputes_exactly_without_noise() {
        let cfg = CohortGenConfig {
            edss_noise_sd: 0.0,
            ..small(Trajectory::MvnLatent, 0.3, 2)
        };
        let (d, _) = generate_cohort(&cfg).unwrap();
        for r in d.records() {
            let mut fs = [0.0; 8];
            for (f, v) in fs.iter_mut().enumerate() {
                *v = r.values[3 + f].unwrap();
            }
            assert_eq!(r.values[11], Some(edss_from_fs(&fs, 0.0)));
        }
    }

    #[test]
    fn values_in_domain_and_static_draws_plausible() {
        let (d, _) = generate_cohort(&CohortGenConfig {
            n_patients: 400,
            ..small(Trajectory::RandomWalk, 0.3, 3)
        })
        .unwrap();
        let schema = d.schema();
        for r in d.records() {
            for (f, v) in r.values.iter().enumerate() {
                assert!(schema.feature(f).domain.contains(v.unwrap()), "{f}");
            }
        }
        let first_rows: Vec<usize> = d.patients().iter().map(|s| s.rows.start).collect();
        let male = first_rows.iter().filter(|&&r| d.cell(r, 0) == Some(1.0)).count() as f64 / 400.0;
        assert!((male - 0.5).abs() < 0.1);
        let age = first_rows.iter().map(|&r| d.cell(r, 1).unwrap()).sum::<f64>() / 400.0;
        assert!((age - 38.0).abs() < 2.5, "{age}");
        assert!(first_rows
            .iter()
            .all(|&r| (18.0..=80.0).contains(&d.cell(r, 1).unwrap())));
    }

    #[test]
    fn degrade_counts_and_mar_direction() {
        let (d, _) = generate_cohort(&small(Trajectory::MvnLatent, 0.3, 6)).unwrap();
        let (m, plan) = degrade(&d, &registry_rates(), Mechanism::Mcar, 1).unwrap();
        for (name, rate) in registry_rates() {
            let f = d.schema().index_of(&name).unwrap();
            assert_eq!(m.n_missing_in(f), (rate * d.len() as f64).round() as usize);
        }
        assert_eq!(plan.len(), m.n_missing());

        let mut rates = BTreeMap::new();
        rates.insert("visual".to_string(), 0.3);
        let (_, plan) = degrade(&d, &rates, Mechanism::Mar, 2).unwrap();
        let hidden: std::collections::BTreeSet<usize> = plan.cells.iter().map(|c| c.row).collect();
        let edss = |rows: &mut dyn Iterator<Item = usize>| {
            let v: Vec<f64> = rows.map(|r| d.cell(r, 11).unwrap()).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let masked = edss(&mut hidden.iter().copied());
        let unmasked = edss(&mut (0..d.len()).filter(|r| !hidden.contains(r)));
        assert!(masked > unmasked);

        let zero: BTreeMap<String, f64> = registry_rates().into_keys().map(|k| (k, 0.0)).collect();
        assert_eq!(degrade(&d, &zero, Mechanism::Mcar, 3).unwrap().0, d);
    }

    #[test]
    fn overall_missing_fraction_matches_weighted_rates() {
        let rates = registry_rates();
        let expected = rates.values().sum::<f64>() / 8.0;
        for seed in 0..10 {
            let (d, _) = generate_cohort(&small(Trajectory::PiecewiseLinear, 0.3, seed)).unwrap();
            let (m, _) = degrade(&d, &rates, Mechanism::Mcar, seed).unwrap();
            let frac = m.n_missing() as f64 / (8 * d.len()) as f64;
            assert!((frac - expected).abs() < 0.005, "{frac} vs {expected}");
        }
    }

    #[test]
    fn rejects_invalid_config() {
        for cfg in [
            CohortGenConfig {
                n_patients: 0,
                ..CohortGenConfig::default()
            },
            CohortGenConfig {
                visits_per_patient: (5, 2),
                ..CohortGenConfig::default()
            },
            CohortGenConfig {
                visit_gap_days: (0, 10),
                ..CohortGenConfig::default()
            },
            CohortGenConfig {
                noise_sd: -1.0,
                ..CohortGenConfig::default()
            },
        ] {
            assert!(generate_cohort(&cfg).is_err());
        }
    }
}
