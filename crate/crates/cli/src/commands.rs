//! Subcommand drivers. Each writes its manifest before any work and
//! rewrites it after every stage, ending with `ok` or `failed`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use longimpute::benchmark::{
    read_imputation_report, run_imputation_benchmark, run_prediction_benchmark, select_top_imputers,
    write_imputation_report, write_per_feature_report, write_prediction_report, ImputationReportRow, RunManifest,
};
use longimpute::data::{load_csv, write_csv, FeatureSchema, LongitudinalDataset, Mechanism};
use longimpute::error::DataError;
use longimpute::impute::{
    jm_impute_with_diagnostics, pool_mean, ImputationMethod, ImputeOptions, Imputer, JmConfig, METHOD_IDS,
};
use longimpute::rng::derive_seed;
use longimpute::synth::{degrade, generate_cohort, CohortGenConfig};

use crate::config::{self, FileConfig, PredictSettings, DEFAULT_IMPUTERS};
use crate::{BenchImputeArgs, BenchPredictArgs, CliError, FullArgs, GenerateArgs, ImputeArgs};

pub const IMPUTATION_REPORT: &str = "imputation_report.csv";
pub const PER_FEATURE_REPORT: &str = "imputation_per_feature.csv";
pub const PREDICTION_REPORT: &str = "prediction_report.csv";

fn log(command: &str, msg: &str) {
    eprintln!("[{command}] {msg}");
}

/// Manifest lifecycle for one command.
struct Run {
    manifest: RunManifest,
    path: PathBuf,
}

impl Run {
    fn start(command: &str, seed: u64, config: Value, path: PathBuf) -> Result<Self, CliError> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let run = Run {
            manifest: RunManifest::new(command, seed, config),
            path,
        };
        run.manifest.write(&run.path)?;
        Ok(run)
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T, CliError>) -> Result<T, CliError> {
        log(&self.manifest.command, &format!("{name}..."));
        let start = Instant::now();
        let out = f();
        let ms = start.elapsed().as_millis() as u64;
        self.manifest.stage(name, ms);
        self.manifest.write(&self.path)?;
        log(&self.manifest.command, &format!("{name} done in {ms} ms"));
        out
    }

    fn output(&mut self, p: &Path) {
        self.manifest.outputs.push(p.display().to_string());
    }

    fn result(&mut self, key: &str, v: Value) {
        if !self.manifest.results.is_object() {
            self.manifest.results = json!({});
        }
        self.manifest.results[key] = v;
    }

    fn finish(mut self, r: Result<(), CliError>) -> Result<(), CliError> {
        self.manifest
            .finish(r.as_ref().map(|_| ()).map_err(ToString::to_string));
        let written = self.manifest.write(&self.path);
        r?;
        written.map_err(Into::into)
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<(), DataError>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn load(path: &Path) -> Result<LongitudinalDataset, CliError> {
    let file = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    load_csv(std::io::BufReader::new(file), &FeatureSchema::ms_default())
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Generates a complete cohort and degrades it with the configured rates.
fn make_cohort(
    run: &mut Run,
    cfg: &CohortGenConfig,
    mechanism: Mechanism,
) -> Result<(LongitudinalDataset, LongitudinalDataset), CliError> {
    let (truth, _) = run.stage("generate", || Ok(generate_cohort(cfg)?))?;
    let (incomplete, plan) = run.stage("degrade", || {
        Ok(degrade(
            &truth,
            &cfg.missing_rates,
            mechanism,
            derive_seed(cfg.seed, "degrade"),
        )?)
    })?;
    run.result(
        "cohort",
        json!({
            "patients": truth.n_patients(),
            "records": truth.len(),
            "missing_cells": plan.len(),
        }),
    );
    Ok((incomplete, truth))
}

fn write_dataset(run: &mut Run, path: &Path, d: &LongitudinalDataset) -> Result<(), CliError> {
    write_file(path, |w| write_csv(d, w))?;
    run.output(path);
    Ok(())
}

pub fn generate(a: GenerateArgs) -> Result<(), CliError> {
    let file = FileConfig::load(&a.common)?;
    config::init_jobs(&a.common, &file)?;
    let seed = config::seed(&a.common, &file);
    let output = config::require(config::pick(a.output, &file.output), "-o/--output")?;
    let truth_path = config::pick(a.truth, &file.truth);
    let mechanism = config::mechanism(&a.mask, &file)?;
    let cfg = config::cohort(&a.cohort, &file, config::rates(&a.mask, &file)?, seed)?;
    let echo = json!({ "cohort": cfg, "mechanism": mechanism, "output": output, "truth": truth_path });
    let mut run = Run::start(
        "generate",
        seed,
        echo,
        config::manifest_path(&a.common, &file, &output, false),
    )?;
    let r = (|| {
        let (incomplete, truth) = make_cohort(&mut run, &cfg, mechanism)?;
        write_dataset(&mut run, &output, &incomplete)?;
        if let Some(p) = &truth_path {
            write_dataset(&mut run, p, &truth)?;
        }
        Ok(())
    })();
    run.finish(r)
}

pub fn impute(a: ImputeArgs) -> Result<(), CliError> {
    let file = FileConfig::load(&a.common)?;
    config::init_jobs(&a.common, &file)?;
    let seed = config::seed(&a.common, &file);
    let input = config::require(config::pick(a.input, &file.input), "-i/--input")?;
    let output = config::require(config::pick(a.output, &file.output), "-o/--output")?;
    let id = config::pick(a.method, &file.method).ok_or_else(|| CliError::Usage("missing --method".into()))?;
    let method = config::methods(std::slice::from_ref(&id))?.remove(0);
    let diagnostics = config::pick(a.diagnostics, &file.diagnostics);
    let jm = match (&method, &diagnostics) {
        (ImputationMethod::Joint(cfg), Some(_)) => Some(cfg.clone()),
        (_, Some(_)) => {
            return Err(CliError::Usage(format!(
                "--diagnostics needs a joint-model method, not {id}"
            )))
        }
        _ => None,
    };
    let use_target = config::use_target(&a.impute, &file);
    let round = config::round_to_domain(&a.impute, &file);
    let echo = json!({
        "method": id, "input": input, "output": output, "diagnostics": diagnostics,
        "use_target_in_imputation": use_target, "round_to_domain": round,
    });
    let mut run = Run::start(
        "impute",
        seed,
        echo,
        config::manifest_path(&a.common, &file, &output, false),
    )?;
    let r = (|| {
        let d = run.stage("load", || load(&input))?;
        let opts = ImputeOptions {
            seed: derive_seed(seed, &format!("impute/{id}")),
            use_target,
        };
        let done = run.stage("impute", || match &jm {
            Some(cfg) => {
                let cfg = JmConfig {
                    seed: opts.seed,
                    use_target,
                    ..cfg.clone()
                };
                let (draws, diag) = jm_impute_with_diagnostics(&d, &cfg)?;
                let p = diagnostics.as_ref().expect("checked above");
                write_file(p, |w| diag.write_csv(w).map_err(DataError::from))?;
                Ok(pool_mean(&draws)?)
            }
            None => Ok(method.impute(&d, &opts)?),
        })?;
        if let Some(p) = &diagnostics {
            run.output(p);
        }
        let out = if round {
            done.dataset.rounded_to_domain()
        } else {
            done.dataset
        };
        write_dataset(&mut run, &output, &out)?;
        run.result("imputed_cells", json!(done.imputed_cells.len()));
        log("impute", &format!("{id}: filled {} cells", done.imputed_cells.len()));
        Ok(())
    })();
    run.finish(r)
}

/// Runs the masking benchmark and writes both imputation reports into
/// `out_dir`. Method failures are recorded and returned as an error after
/// the reports of the other methods are written.
#[allow(clippy::too_many_arguments)]
fn imputation_stage(
    run: &mut Run,
    d: &LongitudinalDataset,
    ids: &[String],
    rates: &std::collections::BTreeMap<String, f64>,
    mechanism: Mechanism,
    use_target: bool,
    seed: u64,
    out_dir: &Path,
) -> Result<(Vec<ImputationReportRow>, Option<CliError>), CliError> {
    let methods = config::methods(ids)?;
    let refs: Vec<&dyn Imputer> = methods.iter().map(|m| m as &dyn Imputer).collect();
    let bench = run.stage("bench-impute", || {
        Ok(run_imputation_benchmark(d, &refs, rates, mechanism, use_target, seed)?)
    })?;
    for r in &bench.rows {
        log(
            &run.manifest.command,
            &format!("{:<13} rmse {:.4} ({} ms)", r.method, r.rmse, r.runtime_ms),
        );
    }
    let report = out_dir.join(IMPUTATION_REPORT);
    write_file(&report, |w| write_imputation_report(&bench.rows, w))?;
    run.output(&report);
    let per_feature = out_dir.join(PER_FEATURE_REPORT);
    write_file(&per_feature, |w| write_per_feature_report(&bench.rows, w))?;
    run.output(&per_feature);
    run.result(
        "imputation",
        json!({
            "complete_case_records": bench.complete_case_records,
            "masked_cells": bench.plan.len(),
            "failures": bench.failures,
        }),
    );
    let failed = (!bench.failures.is_empty()).then(|| {
        let list: Vec<String> = bench
            .failures
            .iter()
            .map(|f| format!("{}: {}", f.method, f.error))
            .collect();
        CliError::Method(list.join("; "))
    });
    Ok((bench.rows, failed))
}

fn prediction_stage(
    run: &mut Run,
    d: &LongitudinalDataset,
    ids: &[String],
    s: &PredictSettings,
    seed: u64,
    out_dir: &Path,
) -> Result<(), CliError> {
    let methods = config::methods(ids)?;
    let refs: Vec<&dyn Imputer> = methods.iter().map(|m| m as &dyn Imputer).collect();
    let b = run.stage("bench-predict", || {
        Ok(run_prediction_benchmark(
            d,
            &refs,
            &s.predictors,
            &s.pair,
            s.test_fraction,
            s.n_final,
            seed,
        )?)
    })?;
    for r in &b.rows {
        let test = r.r2_test.map(|v| format!(" test {v:.4}")).unwrap_or_default();
        log(
            &run.manifest.command,
            &format!(
                "{:<13} {:<4} cv {:.4} ± {:.4}{test}",
                r.imputer, r.predictor, r.mean_r2_cv, r.std_r2_cv
            ),
        );
    }
    let report = out_dir.join(PREDICTION_REPORT);
    write_file(&report, |w| write_prediction_report(&b.rows, w))?;
    run.output(&report);
    let (train, test) = b.split.apply(d);
    run.result(
        "prediction",
        json!({
            "imputers": ids,
            "train": { "patients": train.n_patients(), "records": train.len() },
            "test": { "patients": test.n_patients(), "records": test.len() },
            "patient_disjoint": b.split.is_disjoint(),
            "excluded_pairs": b.selection.excluded,
            "fold_scores": b.rows.iter().map(|r| json!({
                "imputer": r.imputer, "predictor": r.predictor,
                "scores": r.fold_scores, "failed_folds": r.failed_folds,
            })).collect::<Vec<_>>(),
        }),
    );
    Ok(())
}

fn predict_echo(s: &PredictSettings) -> Value {
    json!({
        "folds": s.pair.k,
        "grid_overrides": s.pair.grids,
        "use_target_in_imputation": s.pair.use_target,
        "include_time": s.pair.include_time,
        "round_to_domain": s.pair.round_to_domain,
        "predictors": s.predictors,
        "test_fraction": s.test_fraction,
        "n_final": s.n_final,
    })
}

pub fn bench_impute(a: BenchImputeArgs) -> Result<(), CliError> {
    let file = FileConfig::load(&a.common)?;
    config::init_jobs(&a.common, &file)?;
    let seed = config::seed(&a.common, &file);
    let input = config::require(config::pick(a.input, &file.input), "-i/--input")?;
    let out_dir = config::require(config::pick(a.output, &file.output), "-o/--output")?;
    let ids = config::method_ids(a.methods, &file.methods, &METHOD_IDS);
    config::methods(&ids)?;
    let rates = config::rates(&a.mask, &file)?;
    let mechanism = config::mechanism(&a.mask, &file)?;
    let use_target = config::use_target(&a.impute, &file);
    let echo = json!({
        "input": input, "output": out_dir, "methods": ids, "rates": rates,
        "mechanism": mechanism, "use_target_in_imputation": use_target,
    });
    let mut run = Run::start(
        "bench-impute",
        seed,
        echo,
        config::manifest_path(&a.common, &file, &out_dir, true),
    )?;
    let r = (|| {
        let d = run.stage("load", || load(&input))?;
        let (_, failed) = imputation_stage(&mut run, &d, &ids, &rates, mechanism, use_target, seed, &out_dir)?;
        failed.map_or(Ok(()), Err)
    })();
    run.finish(r)
}

pub fn bench_predict(a: BenchPredictArgs) -> Result<(), CliError> {
    let file = FileConfig::load(&a.common)?;
    config::init_jobs(&a.common, &file)?;
    let seed = config::seed(&a.common, &file);
    let input = config::require(config::pick(a.input, &file.input), "-i/--input")?;
    let out_dir = config::require(config::pick(a.output, &file.output), "-o/--output")?;
    let settings = config::predict_settings(&a.impute, &a.predict, &file)?;
    let report = config::pick(a.imputation_report, &file.imputation_report);
    let ids = match (&report, config::pick(a.imputers, &file.imputers)) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "give --imputers or --imputation-report, not both".into(),
            ))
        }
        (Some(p), None) => {
            let f = File::open(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            let rows = read_imputation_report(std::io::BufReader::new(f))?;
            select_top_imputers(&rows, settings.n_final)?
        }
        (None, ids) => ids.unwrap_or_else(|| DEFAULT_IMPUTERS.iter().map(|s| s.to_string()).collect()),
    };
    config::methods(&ids)?;
    let echo = json!({
        "input": input, "output": out_dir, "imputers": ids, "imputation_report": report,
        "predict": predict_echo(&settings),
    });
    let mut run = Run::start(
        "bench-predict",
        seed,
        echo,
        config::manifest_path(&a.common, &file, &out_dir, true),
    )?;
    let r = (|| {
        let d = run.stage("load", || load(&input))?;
        prediction_stage(&mut run, &d, &ids, &settings, seed, &out_dir)
    })();
    run.finish(r)
}

pub fn full(a: FullArgs) -> Result<(), CliError> {
    let file = FileConfig::load(&a.common)?;
    config::init_jobs(&a.common, &file)?;
    let seed = config::seed(&a.common, &file);
    let out_dir = config::require(config::pick(a.output, &file.output), "-o/--output")?;
    let input = config::pick(a.input, &file.input);
    let rates = config::rates(&a.mask, &file)?;
    let mechanism = config::mechanism(&a.mask, &file)?;
    let cohort = config::cohort(&a.cohort, &file, rates.clone(), seed)?;
    let ids = config::method_ids(a.methods, &file.methods, &METHOD_IDS);
    config::methods(&ids)?;
    let top = config::pick(a.top, &file.top).unwrap_or(5);
    let settings = config::predict_settings(&a.impute, &a.predict, &file)?;
    let use_target = settings.pair.use_target;
    let echo = json!({
        "input": input, "output": out_dir, "cohort": input.is_none().then_some(&cohort),
        "mechanism": mechanism, "rates": rates, "methods": ids, "top": top,
        "predict": predict_echo(&settings),
    });
    let mut run = Run::start(
        "full",
        seed,
        echo,
        config::manifest_path(&a.common, &file, &out_dir, true),
    )?;
    let r = (|| {
        let d = match &input {
            Some(p) => run.stage("load", || load(p))?,
            None => {
                let (incomplete, truth) = make_cohort(&mut run, &cohort, mechanism)?;
                write_dataset(&mut run, &out_dir.join("cohort.csv"), &incomplete)?;
                write_dataset(&mut run, &out_dir.join("truth.csv"), &truth)?;
                incomplete
            }
        };
        let (rows, failed) = imputation_stage(&mut run, &d, &ids, &rates, mechanism, use_target, seed, &out_dir)?;
        let chosen = select_top_imputers(&rows, top)?;
        log("full", &format!("top imputers: {}", chosen.join(", ")));
        prediction_stage(&mut run, &d, &chosen, &settings, seed, &out_dir)?;
        failed.map_or(Ok(()), Err)
    })();
    run.finish(r)
}
