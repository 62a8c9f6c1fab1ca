//! Longitudinal clinical records: schema, dataset, CSV I/O, masking and
//! patient-grouped splits.

mod csv_io;
pub(crate) mod dataset;
mod mask;
mod schema;
mod split;

pub use csv_io::{load_csv, write_csv};
pub use dataset::{complete_case_subset, Cell, LongitudinalDataset, PatientSpan, VisitRecord};
pub use mask::{apply_mask, registry_rates, MaskPlan, MaskedCell, Mechanism, MAX_RATE};
pub use schema::{Domain, Feature, FeatureKind, FeatureSchema, EDSS_DOMAIN, FS_NAMES, REGISTRY_MISSING_RATES};
pub use split::{kfold_by_patient, split_by_patient, FoldAssignment, SplitAssignment};
