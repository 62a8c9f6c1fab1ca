use std::collections::{BTreeSet, HashMap};
use std::ops::Range;

use crate::data::schema::{Domain, FeatureKind, FeatureSchema};
use crate::error::DataError;

/// One cell: `Some(value)` when observed.
pub type Cell = Option<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct VisitRecord {
    pub patient_id: String,
    /// Days since the patient's first visit.
    pub t_days: i64,
    /// Cells in schema order.
    pub values: Vec<Cell>,
}

impl VisitRecord {
    pub fn n_missing(&self) -> usize {
        self.values.iter().filter(|c| c.is_none()).count()
    }
}

/// Contiguous block of one patient's visits inside a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientSpan {
    pub patient_id: String,
    pub rows: Range<usize>,
}

/// Visit records grouped by patient, each patient's visits strictly
/// increasing in `t_days`. Patients appear in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    schema: FeatureSchema,
    records: Vec<VisitRecord>,
    spans: Vec<PatientSpan>,
}

impl LongitudinalDataset {
    /// Validates, groups and sorts records. `row` numbers in errors refer to
    /// positions in `records` (1-based).
    pub fn new(schema: FeatureSchema, records: Vec<VisitRecord>) -> Result<Self, DataError> {
        Self::build(schema, records, true)
    }

    /// Builds without domain checks, for fixtures whose values fall off
    /// the schema range.
    #[cfg(test)]
    pub(crate) fn new_unchecked_domain(schema: FeatureSchema, records: Vec<VisitRecord>) -> Result<Self, DataError> {
        Self::build(schema, records, false)
    }

    fn build(schema: FeatureSchema, records: Vec<VisitRecord>, check_domain: bool) -> Result<Self, DataError> {
        let target = schema.target_index();
        let statics = schema.statics();
        for (i, r) in records.iter().enumerate() {
            let row = i + 1;
            if r.values.len() != schema.len() {
                return Err(DataError::MalformedRow {
                    row,
                    reason: format!("expected {} values, got {}", schema.len(), r.values.len()),
                });
            }
            if r.t_days < 0 {
                return Err(DataError::NegativeTime { row, t_days: r.t_days });
            }
            if r.values[target].is_none() {
                return Err(DataError::TargetMissing { row });
            }
            for &s in &statics {
                if r.values[s].is_none() {
                    return Err(DataError::StaticMissing {
                        row,
                        feature: schema.feature(s).name.clone(),
                    });
                }
            }
            for (f, cell) in r.values.iter().enumerate() {
                if let Some(v) = *cell {
                    let feat = schema.feature(f);
                    let ok = if check_domain {
                        feat.domain.contains(v)
                    } else {
                        v.is_finite()
                    };
                    if !ok {
                        return Err(DataError::OutOfDomain {
                            row,
                            feature: feat.name.clone(),
                            value: v,
                            domain: feat.domain.to_string(),
                        });
                    }
                }
            }
        }

        // group by patient in first-appearance order, keeping original row numbers
        let mut order: Vec<&str> = Vec::new();
        let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            groups
                .entry(r.patient_id.as_str())
                .or_insert_with(|| {
                    order.push(r.patient_id.as_str());
                    Vec::new()
                })
                .push(i);
        }
        let mut sorted_idx = Vec::with_capacity(records.len());
        for pid in &order {
            let mut rows = groups.remove(pid).unwrap_or_default();
            rows.sort_by_key(|&i| (records[i].t_days, i));
            for w in rows.windows(2) {
                if records[w[0]].t_days == records[w[1]].t_days {
                    return Err(DataError::DuplicateVisit {
                        row: w[1] + 1,
                        patient: pid.to_string(),
                        t_days: records[w[1]].t_days,
                    });
                }
            }
            sorted_idx.extend(rows);
        }
        let mut slots: Vec<Option<VisitRecord>> = records.into_iter().map(Some).collect();
        let mut sorted: Vec<VisitRecord> = sorted_idx
            .into_iter()
            .map(|i| slots[i].take().expect("each row used once"))
            .collect();

        let spans = compute_spans(&sorted);
        for span in &spans {
            // rebase time to the first visit
            let t0 = sorted[span.rows.start].t_days;
            if t0 != 0 {
                for r in &mut sorted[span.rows.clone()] {
                    r.t_days -= t0;
                }
            }
            for &s in &statics {
                if matches!(schema.feature(s).domain, Domain::Continuous { .. }) {
                    // age at visit legitimately changes across visits
                    continue;
                }
                let first = sorted[span.rows.start].values[s];
                if sorted[span.rows.clone()].iter().any(|r| r.values[s] != first) {
                    return Err(DataError::StaticNotConstant {
                        patient: span.patient_id.clone(),
                        feature: schema.feature(s).name.clone(),
                    });
                }
            }
        }
        Ok(LongitudinalDataset {
            schema,
            records: sorted,
            spans,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn records(&self) -> &[VisitRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn patients(&self) -> &[PatientSpan] {
        &self.spans
    }

    pub fn n_patients(&self) -> usize {
        self.spans.len()
    }

    pub fn patient_ids(&self) -> BTreeSet<String> {
        self.spans.iter().map(|s| s.patient_id.clone()).collect()
    }

    pub fn cell(&self, row: usize, feature: usize) -> Cell {
        self.records[row].values[feature]
    }

    pub fn n_missing(&self) -> usize {
        self.records.iter().map(VisitRecord::n_missing).sum()
    }

    pub fn n_missing_in(&self, feature: usize) -> usize {
        self.records.iter().filter(|r| r.values[feature].is_none()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.records.iter().all(|r| r.n_missing() == 0)
    }

    /// Observed values of one feature across all records.
    pub fn observed_values(&self, feature: usize) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.values[feature]).collect()
    }

    /// Indices of records whose cell for `feature` is observed.
    pub fn observed_rows(&self, feature: usize) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].values[feature].is_some())
            .collect()
    }

    pub(crate) fn set_cell(&mut self, row: usize, feature: usize, value: Cell) {
        self.records[row].values[feature] = value;
    }

    /// Records of the given patients, in this dataset's order.
    pub fn subset(&self, patients: &BTreeSet<String>) -> LongitudinalDataset {
        let mut records = Vec::new();
        for span in &self.spans {
            if patients.contains(&span.patient_id) {
                records.extend_from_slice(&self.records[span.rows.clone()]);
            }
        }
        let spans = compute_spans(&records);
        LongitudinalDataset {
            schema: self.schema.clone(),
            records,
            spans,
        }
    }

    /// Concatenates two patient-disjoint datasets over the same schema.
    pub fn concat(&self, other: &LongitudinalDataset) -> Result<LongitudinalDataset, DataError> {
        if self.schema != other.schema {
            return Err(DataError::Invalid("schemas differ".into()));
        }
        let mine = self.patient_ids();
        if let Some(p) = other.spans.iter().find(|s| mine.contains(&s.patient_id)) {
            return Err(DataError::Overlap(p.patient_id.clone()));
        }
        let mut records = self.records.clone();
        records.extend_from_slice(&other.records);
        let spans = compute_spans(&records);
        Ok(LongitudinalDataset {
            schema: self.schema.clone(),
            records,
            spans,
        })
    }

    /// Copy with every observed time-varying or target cell snapped to its
    /// schema grid.
    pub fn rounded_to_domain(&self) -> LongitudinalDataset {
        let mut out = self.clone();
        for r in &mut out.records {
            for (f, cell) in r.values.iter_mut().enumerate() {
                let feat = self.schema.feature(f);
                if feat.kind == FeatureKind::Static {
                    continue;
                }
                if let Some(v) = cell {
                    *v = feat.domain.snap(*v);
                }
            }
        }
        out
    }

    /// Keeps only records with no missing cell.
    pub fn complete_case_subset(&self) -> Result<LongitudinalDataset, DataError> {
        let records: Vec<VisitRecord> = self.records.iter().filter(|r| r.n_missing() == 0).cloned().collect();
        if records.is_empty() {
            return Err(DataError::EmptyCompleteCase);
        }
        let spans = compute_spans(&records);
        Ok(LongitudinalDataset {
            schema: self.schema.clone(),
            records,
            spans,
        })
    }
}

/// Free-function form of [`LongitudinalDataset::complete_case_subset`].
pub fn complete_case_subset(d: &LongitudinalDataset) -> Result<LongitudinalDataset, DataError> {
    d.complete_case_subset()
}

fn compute_spans(records: &[VisitRecord]) -> Vec<PatientSpan> {
    let mut spans: Vec<PatientSpan> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        match spans.last_mut() {
            Some(s) if s.patient_id == r.patient_id => s.rows.end = i + 1,
            _ => spans.push(PatientSpan {
                patient_id: r.patient_id.clone(),
                rows: i..i + 1,
            }),
        }
    }
    spans
}
