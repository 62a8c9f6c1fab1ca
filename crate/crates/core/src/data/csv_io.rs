//! Visit-per-row CSV format.
//!
//! Header: `patient_id,t_days,<schema feature names...>`, optionally followed
//! by `age_baseline`. An empty field or `NA` is a missing cell.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::data::dataset::{LongitudinalDataset, VisitRecord};
use crate::data::schema::FeatureSchema;
use crate::error::DataError;

const DAYS_PER_YEAR: f64 = 365.25;

fn expected_header(schema: &FeatureSchema) -> Vec<String> {
    let mut h = vec!["patient_id".to_string(), "t_days".to_string()];
    h.extend(schema.names().map(str::to_string));
    h
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<Option<f64>, DataError> {
    let s = raw.trim();
    if s.is_empty() || s == "NA" {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| DataError::MalformedRow {
        row,
        reason: format!("column {column}: cannot parse `{s}` as a number"),
    })
}

/// Parses a dataset and validates every dataset invariant.
pub fn load_csv<R: Read>(source: R, schema: &FeatureSchema) -> Result<LongitudinalDataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let expected = expected_header(schema);
    let with_baseline = header.len() == expected.len() + 1 && header.last().map(String::as_str) == Some("age_baseline");
    let head = if with_baseline {
        &header[..expected.len()]
    } else {
        &header[..]
    };
    if head != expected.as_slice() {
        return Err(DataError::Header {
            expected: expected.join(","),
            found: header.join(","),
        });
    }
    let n_feat = schema.len();
    let mut records = Vec::new();
    let mut baselines: Vec<Option<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| DataError::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        let patient_id = rec[0].trim().to_string();
        if patient_id.is_empty() {
            return Err(DataError::MalformedRow {
                row,
                reason: "empty patient_id".into(),
            });
        }
        let t_days: i64 = rec[1].trim().parse().map_err(|_| DataError::MalformedRow {
            row,
            reason: format!("t_days `{}` is not an integer", rec[1].trim()),
        })?;
        let mut values = Vec::with_capacity(n_feat);
        for f in 0..n_feat {
            values.push(parse_cell(&rec[f + 2], row, &expected[f + 2])?);
        }
        if with_baseline {
            baselines.push(parse_cell(&rec[n_feat + 2], row, "age_baseline")?);
        }
        records.push(VisitRecord {
            patient_id,
            t_days,
            values,
        });
    }
    if with_baseline {
        if let Some(age) = schema.index_of("age") {
            let mut first_t: HashMap<&str, i64> = HashMap::new();
            for r in &records {
                let e = first_t.entry(r.patient_id.as_str()).or_insert(r.t_days);
                *e = (*e).min(r.t_days);
            }
            let ages: Vec<Option<f64>> = records
                .iter()
                .zip(&baselines)
                .map(|(r, b)| b.map(|b| b + (r.t_days - first_t[r.patient_id.as_str()]) as f64 / DAYS_PER_YEAR))
                .collect();
            for (r, a) in records.iter_mut().zip(ages) {
                if a.is_some() {
                    r.values[age] = a;
                }
            }
        }
    }
    LongitudinalDataset::new(schema.clone(), records)
}

pub fn write_csv<W: Write>(d: &LongitudinalDataset, sink: W) -> Result<(), DataError> {
    let mut w = csv::WriterBuilder::new().from_writer(sink);
    w.write_record(expected_header(d.schema()))?;
    let mut fields: Vec<String> = Vec::with_capacity(d.schema().len() + 2);
    for r in d.records() {
        fields.clear();
        fields.push(r.patient_id.clone());
        fields.push(r.t_days.to_string());
        for c in &r.values {
            fields.push(match c {
                Some(v) => format!("{v}"),
                None => String::new(),
            });
        }
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}
