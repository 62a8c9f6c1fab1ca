use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Static,
    TimeVarying,
    Target,
}

/// Value domain of one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Binary,
    Ordinal { lo: f64, hi: f64, step: f64 },
    Continuous { lo: f64, hi: f64 },
}

impl Domain {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Domain::Binary => (0.0, 1.0),
            Domain::Ordinal { lo, hi, .. } | Domain::Continuous { lo, hi } => (lo, hi),
        }
    }

    /// Range membership. Ordinal values are not required to sit on the grid,
    /// so real-valued imputations of an ordinal score stay loadable.
    pub fn contains(&self, v: f64) -> bool {
        if !v.is_finite() {
            return false;
        }
        match *self {
            Domain::Binary => v == 0.0 || v == 1.0,
            _ => {
                let (lo, hi) = self.bounds();
                v >= lo && v <= hi
            }
        }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        let (lo, hi) = self.bounds();
        v.clamp(lo, hi)
    }

    /// Nearest valid value: clamps into range, then rounds onto the grid.
    pub fn snap(&self, v: f64) -> f64 {
        match *self {
            Domain::Binary => {
                if v >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            Domain::Ordinal { lo, hi, step } => {
                let k = ((v.clamp(lo, hi) - lo) / step).round();
                (lo + k * step).clamp(lo, hi)
            }
            Domain::Continuous { lo, hi } => v.clamp(lo, hi),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Binary => write!(f, "{{0,1}}"),
            Domain::Ordinal { lo, hi, .. } | Domain::Continuous { lo, hi } => {
                write!(f, "[{lo},{hi}]")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    pub domain: Domain,
}

impl Feature {
    pub fn new(name: &str, kind: FeatureKind, domain: Domain) -> Self {
        Feature {
            name: name.to_string(),
            kind,
            domain,
        }
    }
}

/// Ordered feature list with exactly one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    features: Vec<Feature>,
    target: usize,
}

pub const EDSS_DOMAIN: Domain = Domain::Ordinal {
    lo: 0.0,
    hi: 10.0,
    step: 0.5,
};

const FS_DOMAIN: Domain = Domain::Ordinal {
    lo: 0.0,
    hi: 6.0,
    step: 1.0,
};

/// Functional-system sub-scores, in registry table order.
///
/// The registry labels `Tronchioencephalic` and `Sensitive` are stored as
/// `brainstem` and `sensory`.
pub const FS_NAMES: [&str; 8] = [
    "pyramidal",
    "cerebellar",
    "brainstem",
    "sensory",
    "sphincteric",
    "visual",
    "mental",
    "deambulation",
];

/// Registry missing rates per sub-score, as fractions.
pub const REGISTRY_MISSING_RATES: [(&str, f64); 8] = [
    ("pyramidal", 0.1128),
    ("cerebellar", 0.1327),
    ("brainstem", 0.1322),
    ("sensory", 0.1277),
    ("sphincteric", 0.1353),
    ("visual", 0.1370),
    ("mental", 0.1384),
    ("deambulation", 0.1473),
];

impl FeatureSchema {
    pub fn new(features: Vec<Feature>) -> Result<Self, DataError> {
        let targets: Vec<usize> = features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == FeatureKind::Target)
            .map(|(i, _)| i)
            .collect();
        if targets.len() != 1 {
            return Err(DataError::Invalid(format!(
                "schema needs exactly one target, found {}",
                targets.len()
            )));
        }
        let target = targets[0];
        if features[target].domain != EDSS_DOMAIN {
            return Err(DataError::Invalid("target domain must be ordinal(0, 10, 0.5)".into()));
        }
        for (i, f) in features.iter().enumerate() {
            if f.name == "patient_id" || f.name == "t_days" || f.name == "age_baseline" {
                return Err(DataError::Invalid(format!("reserved feature name {}", f.name)));
            }
            if features[..i].iter().any(|g| g.name == f.name) {
                return Err(DataError::Invalid(format!("duplicate feature name {}", f.name)));
            }
        }
        Ok(FeatureSchema { features, target })
    }

    /// Three static features, eight FS sub-scores, EDSS target.
    pub fn ms_default() -> Self {
        let mut features = vec![
            Feature::new("sex", FeatureKind::Static, Domain::Binary),
            Feature::new("age", FeatureKind::Static, Domain::Continuous { lo: 0.0, hi: 100.0 }),
            Feature::new("pediatric_onset", FeatureKind::Static, Domain::Binary),
        ];
        for name in FS_NAMES {
            let domain = if name == "deambulation" {
                Domain::Ordinal {
                    lo: 0.0,
                    hi: 12.0,
                    step: 1.0,
                }
            } else {
                FS_DOMAIN
            };
            features.push(Feature::new(name, FeatureKind::TimeVarying, domain));
        }
        features.push(Feature::new("edss", FeatureKind::Target, EDSS_DOMAIN));
        FeatureSchema::new(features).expect("default schema is valid")
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature(&self, idx: usize) -> &Feature {
        &self.features[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn target_index(&self) -> usize {
        self.target
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn indices_of_kind(&self, kind: FeatureKind) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn time_varying(&self) -> Vec<usize> {
        self.indices_of_kind(FeatureKind::TimeVarying)
    }

    pub fn statics(&self) -> Vec<usize> {
        self.indices_of_kind(FeatureKind::Static)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_layout() {
        let s = FeatureSchema::ms_default();
        assert_eq!(s.len(), 12);
        assert_eq!(s.statics(), vec![0, 1, 2]);
        assert_eq!(s.time_varying(), (3..11).collect::<Vec<_>>());
        assert_eq!(s.target_index(), 11);
        assert_eq!(s.feature(10).domain.bounds(), (0.0, 12.0));
        let names: Vec<&str> = REGISTRY_MISSING_RATES.iter().map(|(n, _)| *n).collect();
        assert_eq!(names, FS_NAMES);
    }

    #[test]
    fn rejects_two_targets_and_duplicates() {
        let mut f = FeatureSchema::ms_default().features().to_vec();
        f.push(Feature::new("edss2", FeatureKind::Target, EDSS_DOMAIN));
        assert!(FeatureSchema::new(f).is_err());
        let mut f = FeatureSchema::ms_default().features().to_vec();
        f[4].name = "pyramidal".into();
        assert!(FeatureSchema::new(f).is_err());
    }

    #[test]
    fn snapping_to_edss_grid() {
        assert_eq!(EDSS_DOMAIN.snap(3.74), 3.5);
        assert_eq!(EDSS_DOMAIN.snap(3.76), 4.0);
        assert_eq!(EDSS_DOMAIN.snap(-2.0), 0.0);
        assert_eq!(EDSS_DOMAIN.snap(11.3), 10.0);
        assert_eq!(Domain::Binary.snap(0.7), 1.0);
    }

    #[test]
    fn domain_membership() {
        assert!(FS_DOMAIN.contains(2.5));
        assert!(!FS_DOMAIN.contains(9.0));
        assert!(!Domain::Binary.contains(0.5));
        assert!(!FS_DOMAIN.contains(f64::NAN));
        assert_eq!(FS_DOMAIN.to_string(), "[0,6]");
    }
}
