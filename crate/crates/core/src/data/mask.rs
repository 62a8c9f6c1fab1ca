use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::dataset::LongitudinalDataset;
use crate::data::schema::{FeatureKind, REGISTRY_MISSING_RATES};
use crate::error::DataError;
use crate::rng::rng_from_seed;

const MAX_DRAWS: usize = 100;
pub const MAX_RATE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mechanism {
    #[default]
    Mcar,
    /// Selection weight `logistic(EDSS - 4)`.
    Mar,
}

impl std::str::FromStr for Mechanism {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mcar" => Ok(Mechanism::Mcar),
            "mar" => Ok(Mechanism::Mar),
            other => Err(DataError::Invalid(format!("unknown mechanism {other}"))),
        }
    }
}

/// A deliberately hidden cell and its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedCell {
    pub patient_id: String,
    pub t_days: i64,
    pub feature: String,
    pub true_value: f64,
    /// Record position in the source (and masked) dataset.
    pub row: usize,
    pub feature_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub cells: Vec<MaskedCell>,
    pub per_feature_rate: BTreeMap<String, f64>,
    pub seed: u64,
    pub mechanism: Mechanism,
}

impl MaskPlan {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// The registry missing rates as a rate map.
pub fn registry_rates() -> BTreeMap<String, f64> {
    REGISTRY_MISSING_RATES
        .iter()
        .map(|(n, r)| (n.to_string(), *r))
        .collect()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Hides `round(rate * n_records)` cells per feature.
pub fn apply_mask(
    d: &LongitudinalDataset,
    rates: &BTreeMap<String, f64>,
    mechanism: Mechanism,
    seed: u64,
) -> Result<(LongitudinalDataset, MaskPlan), DataError> {
    let schema = d.schema();
    let mut targets: Vec<(usize, f64)> = Vec::new();
    for (name, &rate) in rates {
        let f = schema
            .index_of(name)
            .ok_or_else(|| DataError::UnknownFeature(name.clone()))?;
        if schema.feature(f).kind != FeatureKind::TimeVarying {
            return Err(DataError::NotMaskable(name.clone()));
        }
        if !(0.0..=MAX_RATE).contains(&rate) || rate.is_nan() {
            return Err(DataError::BadRate {
                feature: name.clone(),
                rate,
            });
        }
        if d.n_missing_in(f) > 0 {
            return Err(DataError::NotFullyObserved { feature: name.clone() });
        }
        targets.push((f, rate));
    }
    targets.sort_by_key(|&(f, _)| f);

    let n = d.len();
    let edss = schema.target_index();
    let weights: Vec<f64> = d
        .records()
        .iter()
        .map(|r| logistic(r.values[edss].unwrap_or(0.0) - 4.0))
        .collect();
    let mut rng = rng_from_seed(seed);
    let mut masked = d.clone();
    let mut cells = Vec::new();
    let mut hidden = vec![false; n];

    for &(f, rate) in &targets {
        let k = (rate * n as f64).round() as usize;
        if k == 0 {
            continue;
        }
        let mut chosen: Option<Vec<usize>> = None;
        for _ in 0..MAX_DRAWS {
            let mut rows = match mechanism {
                Mechanism::Mcar => index::sample(&mut rng, n, k).into_vec(),
                Mechanism::Mar => weighted_sample(&mut rng, &weights, k),
            };
            rows.sort_unstable();
            hidden.iter_mut().for_each(|h| *h = false);
            for &r in &rows {
                hidden[r] = true;
            }
            let empties = d.patients().iter().any(|span| span.rows.clone().all(|r| hidden[r]));
            if !empties {
                chosen = Some(rows);
                break;
            }
        }
        let rows = chosen.ok_or_else(|| DataError::MaskExhausted {
            feature: schema.feature(f).name.clone(),
            attempts: MAX_DRAWS,
        })?;
        for r in rows {
            let rec = &d.records()[r];
            cells.push(MaskedCell {
                patient_id: rec.patient_id.clone(),
                t_days: rec.t_days,
                feature: schema.feature(f).name.clone(),
                true_value: rec.values[f].expect("source fully observed"),
                row: r,
                feature_index: f,
            });
            masked.set_cell(r, f, None);
        }
    }
    let plan = MaskPlan {
        cells,
        per_feature_rate: rates.clone(),
        seed,
        mechanism,
    };
    Ok((masked, plan))
}

/// Weighted sampling without replacement (exponential-key method).
fn weighted_sample<R: rand::Rng>(rng: &mut R, weights: &[f64], k: usize) -> Vec<usize> {
    let mut keys: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (u.ln() / w, i)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keys.truncate(k);
    keys.into_iter().map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::tests::{full, rec};
    use crate::data::schema::FeatureSchema;

    fn cohort(patients: usize, visits: usize) -> LongitudinalDataset {
        let mut recs = Vec::new();
        for p in 0..patients {
            for v in 0..visits {
                let val = ((p * 7 + v * 3) % 7) as f64;
                recs.push(rec(
                    &format!("p{p}"),
                    30 * v as i64,
                    full(val.min(6.0)),
                    (v % 11) as f64 * 0.5 + p as f64 % 5.0,
                ));
            }
        }
        LongitudinalDataset::new(FeatureSchema::ms_default(), recs).unwrap()
    }

    #[test]
    fn zero_rates_mask_nothing() {
        let d = cohort(5, 6);
        let rates: BTreeMap<String, f64> = registry_rates().into_keys().map(|k| (k, 0.0)).collect();
        let (m, plan) = apply_mask(&d, &rates, Mechanism::Mcar, 3).unwrap();
        assert!(plan.is_empty());
        assert_eq!(m, d);
    }

    #[test]
    fn registry_rates_give_exact_counts() {
        let d = cohort(40, 12);
        let n = d.len() as f64;
        let (m, plan) = apply_mask(&d, &registry_rates(), Mechanism::Mcar, 11).unwrap();
        for (name, rate) in REGISTRY_MISSING_RATES {
            let f = d.schema().index_of(name).unwrap();
            let expected = (rate * n).round() as usize;
            assert_eq!(m.n_missing_in(f), expected, "{name}");
            assert_eq!(plan.cells.iter().filter(|c| c.feature == name).count(), expected);
        }
        // masked dataset differs from the source only at plan cells
        let mut restored = m.clone();
        for c in &plan.cells {
            assert_eq!(d.cell(c.row, c.feature_index), Some(c.true_value));
            restored.set_cell(c.row, c.feature_index, Some(c.true_value));
        }
        assert_eq!(restored, d);
    }

    #[test]
    fn deterministic_given_seed() {
        let d = cohort(20, 8);
        let a = apply_mask(&d, &registry_rates(), Mechanism::Mcar, 5).unwrap();
        let b = apply_mask(&d, &registry_rates(), Mechanism::Mcar, 5).unwrap();
        let c = apply_mask(&d, &registry_rates(), Mechanism::Mcar, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.1.cells, c.1.cells);
    }

    #[test]
    fn mar_prefers_high_edss() {
        let d = cohort(60, 10);
        let mut rates = BTreeMap::new();
        rates.insert("pyramidal".to_string(), 0.3);
        let (_, plan) = apply_mask(&d, &rates, Mechanism::Mar, 9).unwrap();
        let edss = d.schema().target_index();
        let masked_mean: f64 = plan.cells.iter().map(|c| d.cell(c.row, edss).unwrap()).sum::<f64>() / plan.len() as f64;
        let overall: f64 = d.records().iter().map(|r| r.values[edss].unwrap()).sum::<f64>() / d.len() as f64;
        assert!(masked_mean > overall);
    }

    #[test]
    fn rejects_bad_rates_and_features() {
        let d = cohort(3, 3);
        let mut r = BTreeMap::new();
        r.insert("edss".to_string(), 0.1);
        assert!(matches!(
            apply_mask(&d, &r, Mechanism::Mcar, 0),
            Err(DataError::NotMaskable(_))
        ));
        let mut r = BTreeMap::new();
        r.insert("visual".to_string(), 0.95);
        assert!(matches!(
            apply_mask(&d, &r, Mechanism::Mcar, 0),
            Err(DataError::BadRate { .. })
        ));
    }

    #[test]
    fn errors_when_every_draw_empties_a_series() {
        // single-visit patients: any masked cell empties its series
        let d = cohort(10, 1);
        let mut r = BTreeMap::new();
        r.insert("visual".to_string(), 0.5);
        assert!(matches!(
            apply_mask(&d, &r, Mechanism::Mcar, 0),
            Err(DataError::MaskExhausted { attempts: 100, .. })
        ));
    }
}
