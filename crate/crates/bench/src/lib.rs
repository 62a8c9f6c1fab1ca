//! Fixtures shared by the benchmarks.

use longimpute::data::{registry_rates, LongitudinalDataset, Mechanism};
use longimpute::predict::{FeatureMatrix, Standardizer};
use longimpute::synth::{degrade, generate_cohort, CohortGenConfig, Trajectory};

/// A cohort of `n_patients` degraded at the registry missing rates.
pub fn incomplete_cohort(n_patients: usize, seed: u64) -> LongitudinalDataset {
    let cfg = CohortGenConfig {
        n_patients,
        trajectory: Trajectory::RandomWalk,
        seed,
        ..CohortGenConfig::default()
    };
    let complete = generate_cohort(&cfg).expect("valid config").0;
    degrade(&complete, &registry_rates(), Mechanism::Mcar, seed)
        .expect("rates below the cap")
        .0
}

/// The standardized design matrix of a complete cohort.
pub fn design(n_patients: usize, seed: u64) -> FeatureMatrix {
    let cfg = CohortGenConfig {
        n_patients,
        trajectory: Trajectory::MvnLatent,
        seed,
        ..CohortGenConfig::default()
    };
    let complete = generate_cohort(&cfg).expect("valid config").0;
    let m = FeatureMatrix::from_dataset(&complete, true).expect("complete cohort");
    Standardizer::fit(&m).apply(&m)
}
