use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::dataset::LongitudinalDataset;
use crate::error::DataError;
use crate::rng::rng_from_seed;

/// Patient-level train/test assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_patients: BTreeSet<String>,
    pub test_patients: BTreeSet<String>,
}

impl SplitAssignment {
    pub fn is_disjoint(&self) -> bool {
        self.train_patients.is_disjoint(&self.test_patients)
    }

    pub fn check_disjoint(&self) -> Result<(), DataError> {
        match self.train_patients.intersection(&self.test_patients).next() {
            Some(p) => Err(DataError::Overlap(p.clone())),
            None => Ok(()),
        }
    }

    pub fn apply(&self, d: &LongitudinalDataset) -> (LongitudinalDataset, LongitudinalDataset) {
        (d.subset(&self.train_patients), d.subset(&self.test_patients))
    }
}

/// Patient-level k-fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: BTreeMap<String, usize>,
}

impl FoldAssignment {
    /// Fold `fold` as validation, the rest as training.
    pub fn split_for(&self, fold: usize) -> SplitAssignment {
        let mut train_patients = BTreeSet::new();
        let mut test_patients = BTreeSet::new();
        for (p, &f) in &self.fold_of {
            if f == fold {
                test_patients.insert(p.clone());
            } else {
                train_patients.insert(p.clone());
            }
        }
        SplitAssignment {
            train_patients,
            test_patients,
        }
    }

    pub fn fold_record_counts(&self, d: &LongitudinalDataset) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for span in d.patients() {
            if let Some(&f) = self.fold_of.get(&span.patient_id) {
                counts[f] += span.rows.len();
            }
        }
        counts
    }
}

fn shuffled_patients(d: &LongitudinalDataset, seed: u64) -> Vec<(String, usize)> {
    let mut patients: Vec<(String, usize)> = d
        .patients()
        .iter()
        .map(|s| (s.patient_id.clone(), s.rows.len()))
        .collect();
    let mut rng = rng_from_seed(seed);
    patients.shuffle(&mut rng);
    patients
}

/// Shuffles patients and fills the test side until it holds at least
/// `test_fraction` of all records. At least one patient stays in training.
pub fn split_by_patient(d: &LongitudinalDataset, test_fraction: f64, seed: u64) -> Result<SplitAssignment, DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::Invalid(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    if d.n_patients() < 2 {
        return Err(DataError::TooFewPatients {
            needed: 2,
            found: d.n_patients(),
        });
    }
    let patients = shuffled_patients(d, seed);
    let goal = test_fraction * d.len() as f64;
    let mut test_records = 0usize;
    let mut test_patients = BTreeSet::new();
    let mut train_patients = BTreeSet::new();
    let last = patients.len() - 1;
    for (i, (p, n)) in patients.into_iter().enumerate() {
        if (test_records as f64) < goal && i < last {
            test_records += n;
            test_patients.insert(p);
        } else {
            train_patients.insert(p);
        }
    }
    Ok(SplitAssignment {
        train_patients,
        test_patients,
    })
}

/// Greedy largest-first assignment of patients to `k` folds balanced by
/// record count.
pub fn kfold_by_patient(d: &LongitudinalDataset, k: usize, seed: u64) -> Result<FoldAssignment, DataError> {
    if k < 2 {
        return Err(DataError::Invalid(format!("k = {k} < 2")));
    }
    if k > d.n_patients() {
        return Err(DataError::TooFewPatients {
            needed: k,
            found: d.n_patients(),
        });
    }
    let mut patients = shuffled_patients(d, seed);
    // stable: equal-size patients keep their shuffled order
    patients.sort_by_key(|p| std::cmp::Reverse(p.1));
    let mut load = vec![0usize; k];
    let mut fold_of = BTreeMap::new();
    for (p, n) in patients {
        let f = (0..k).min_by_key(|&f| (load[f], f)).expect("k >= 2");
        load[f] += n;
        fold_of.insert(p, f);
    }
    Ok(FoldAssignment { k, fold_of })
}
