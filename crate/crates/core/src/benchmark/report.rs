//! Report files and the run manifest.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::benchmark::{ImputationReportRow, PairResult};
use crate::error::DataError;

/// `method,rmse,n_masked,runtime_ms`, one row per method in `rows` order.
pub fn write_imputation_report<W: Write>(rows: &[ImputationReportRow], sink: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["method", "rmse", "n_masked", "runtime_ms"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.rmse.to_string(),
            r.n_masked.to_string(),
            r.runtime_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_imputation_report`]; per-feature RMSE
/// is not part of that file and comes back empty.
pub fn read_imputation_report<R: Read>(source: R) -> Result<Vec<ImputationReportRow>, DataError> {
    let mut r = csv::Reader::from_reader(source);
    let expected = "method,rmse,n_masked,runtime_ms";
    let found = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if found != expected {
        return Err(DataError::Header {
            expected: expected.into(),
            found,
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |reason: String| DataError::MalformedRow { row: i + 2, reason };
        let num = |k: usize| rec[k].parse::<f64>().map_err(|e| bad(format!("{}: {e}", &rec[k])));
        rows.push(ImputationReportRow {
            method: rec[0].to_string(),
            rmse: num(1)?,
            n_masked: rec[2].parse().map_err(|e| bad(format!("n_masked: {e}")))?,
            runtime_ms: rec[3].parse().map_err(|e| bad(format!("runtime_ms: {e}")))?,
            per_feature_rmse: BTreeMap::new(),
        });
    }
    Ok(rows)
}

/// `method,feature,rmse` over every method and masked feature.
pub fn write_per_feature_report<W: Write>(rows: &[ImputationReportRow], sink: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["method", "feature", "rmse"])?;
    for r in rows {
        for (f, v) in &r.per_feature_rmse {
            w.write_record([r.method.as_str(), f.as_str(), v.to_string().as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `imputer,predictor,mean_r2_cv,std_r2_cv,r2_test,hyperparameters_json`;
/// `r2_test` is empty for pairs not evaluated on the test split.
pub fn write_prediction_report<W: Write>(rows: &[PairResult], sink: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "imputer",
        "predictor",
        "mean_r2_cv",
        "std_r2_cv",
        "r2_test",
        "hyperparameters_json",
    ])?;
    for r in rows {
        w.write_record([
            r.imputer.clone(),
            r.predictor.clone(),
            r.mean_r2_cv.to_string(),
            r.std_r2_cv.to_string(),
            r.r2_test.map(|v| v.to_string()).unwrap_or_default(),
            r.hyperparameters_json.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub name: String,
    pub runtime_ms: u64,
}

/// Written before a run starts and rewritten as stages finish, so a crashed
/// run leaves `status = "running"` or `"failed"` behind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub versions: BTreeMap<String, String>,
    pub stages: Vec<StageTiming>,
    pub outputs: Vec<String>,
    /// Run summary: failures, exclusions, selections and split sizes.
    #[serde(default)]
    pub results: serde_json::Value,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        let versions = [("longimpute", env!("CARGO_PKG_VERSION")), ("report_format", "1")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        RunManifest {
            status: "running".into(),
            command: command.into(),
            seed,
            config,
            versions,
            stages: Vec::new(),
            outputs: Vec::new(),
            results: serde_json::Value::Null,
            error: None,
        }
    }

    pub fn stage(&mut self, name: &str, runtime_ms: u64) {
        self.stages.push(StageTiming {
            name: name.into(),
            runtime_ms,
        });
    }

    pub fn finish(&mut self, result: Result<(), String>) {
        match result {
            Ok(()) => self.status = "ok".into(),
            Err(e) => {
                self.status = "failed".into();
                self.error = Some(e);
            }
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| DataError::Io(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}
