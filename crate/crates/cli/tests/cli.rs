use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_longimpute");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, name: &str, patients: &str) -> PathBuf {
    let out = dir.join(name);
    let o = run(&["generate", "--patients", patients, "--seed", "7", "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_is_deterministic_and_jobs_independent() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), "a/cohort.csv", "50");
    let b = dir.path().join("b/cohort.csv");
    let o = run(&[
        "generate",
        "--patients",
        "50",
        "--seed",
        "7",
        "--jobs",
        "1",
        "-o",
        s(&b),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let m = manifest(&dir.path().join("a/run_manifest.json"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["seed"], 7);
}

#[test]
fn generate_writes_truth_without_missing_cells() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cohort.csv");
    let truth = dir.path().join("truth.csv");
    let o = run(&["generate", "--patients", "20", "-o", s(&out), "--truth", s(&truth)]);
    assert_eq!(code(&o), 0);
    let observed = std::fs::read_to_string(&out).unwrap();
    let complete = std::fs::read_to_string(&truth).unwrap();
    assert_eq!(observed.lines().count(), complete.lines().count());
    assert!(observed.contains(",,"));
    assert!(!complete.contains(",,") && !complete.lines().any(|l| l.ends_with(',')));
}

#[test]
fn impute_fills_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), "in.csv", "30");
    let out = dir.path().join("done.csv");
    let o = run(&["impute", "--method", "locf", "-i", s(&input), "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.lines().skip(1).all(|l| !l.contains(",,") && !l.ends_with(',')));
}

#[test]
fn impute_round_to_domain_and_joint_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), "in.csv", "15");
    let out = dir.path().join("done.csv");
    let diag = dir.path().join("trace.csv");
    let cfg = dir.path().join("fast.toml");
    std::fs::write(&cfg, "round_to_domain = true\n").unwrap();
    let o = run(&[
        "impute",
        "--method",
        "jm_single",
        "-i",
        s(&input),
        "-o",
        s(&out),
        "--diagnostics",
        s(&diag),
        "--config",
        s(&cfg),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(&diag).unwrap();
    assert!(trace.starts_with("iteration,accepted"));
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let pyr = headers.iter().position(|h| h == "pyramidal").unwrap();
    for rec in rdr.records() {
        let v: f64 = rec.unwrap()[pyr].parse().unwrap();
        assert_eq!(v, v.round(), "pyramidal {v} not on the integer grid");
    }
    let o = run(&[
        "impute",
        "--method",
        "locf",
        "-i",
        s(&input),
        "-o",
        s(&out),
        "--diagnostics",
        s(&diag),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), "in.csv", "10");
    let out = dir.path().join("o.csv");
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["nonsense"])), 1);
    assert_eq!(
        code(&run(&["impute", "--method", "nope", "-i", s(&input), "-o", s(&out)])),
        1
    );
    assert_eq!(code(&run(&["impute", "--method", "locf", "-o", s(&out)])), 1);
    assert_eq!(
        code(&run(&[
            "bench-predict",
            "-i",
            s(&input),
            "-o",
            s(dir.path()),
            "--folds",
            "1"
        ])),
        1
    );

    let missing = dir.path().join("absent.csv");
    assert_eq!(
        code(&run(&["impute", "--method", "locf", "-i", s(&missing), "-o", s(&out)])),
        2
    );
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "patient_id,t_days\nP1,0\n").unwrap();
    let o = run(&["impute", "--method", "locf", "-i", s(&bad), "-o", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("header"));
}

#[test]
fn method_failure_exits_three_and_marks_manifest_failed() {
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), "in.csv", "10");
    // Blank one time-varying column: nothing is left to impute it from.
    let text = std::fs::read_to_string(&input).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "visual").unwrap();
    let blanked: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            let mut f: Vec<&str> = l.split(',').collect();
            if i > 0 {
                f[col] = "";
            }
            f.join(",")
        })
        .collect();
    let input = dir.path().join("blank.csv");
    std::fs::write(&input, blanked.join("\n") + "\n").unwrap();
    let out = dir.path().join("out/done.csv");
    let o = run(&["impute", "--method", "pmm", "-i", s(&input), "-o", s(&out)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("visual"));
    let m = manifest(&dir.path().join("out/run_manifest.json"));
    assert_eq!(m["status"], "failed");
    assert!(m["error"].as_str().unwrap().contains("visual"));
    assert!(!out.exists());
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "patients = 12\nseed = 3\ntrajectory = \"random_walk\"\n").unwrap();
    let from_file = dir.path().join("file.csv");
    let o = run(&["generate", "--config", s(&cfg), "--seed", "4", "-o", s(&from_file)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let from_flags = dir.path().join("flags.csv");
    let o = run(&[
        "generate",
        "--patients",
        "12",
        "--seed",
        "4",
        "--trajectory",
        "random_walk",
        "-o",
        s(&from_flags),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(&from_file).unwrap(), std::fs::read(&from_flags).unwrap());

    std::fs::write(&cfg, "patientz = 12\n").unwrap();
    assert_eq!(code(&run(&["generate", "--config", s(&cfg), "-o", s(&from_file)])), 1);
}

fn small_grid(dir: &Path) -> PathBuf {
    let p = dir.join("grid.json");
    std::fs::write(
        &p,
        r#"{"knn": {"k": [5]}, "rf": {"n_trees": [10], "min_leaf": [5]},
            "gbt": {"n_rounds": [20], "learning_rate": [0.1]}, "svr": {"c": [1], "gamma": [0]}}"#,
    )
    .unwrap();
    p
}

#[test]
fn bench_impute_then_predict_from_its_report() {
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), "in.csv", "40");
    let out = dir.path().join("bench");
    let o = run(&[
        "bench-impute",
        "-i",
        s(&input),
        "-o",
        s(&out),
        "--methods",
        "linear,locf,ewma,spline,lgp,pmm",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("imputation_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 7);
    assert!(report.starts_with("method,rmse,n_masked,runtime_ms\n"));
    assert!(out.join("imputation_per_feature.csv").exists());

    let grid = small_grid(dir.path());
    let pred = dir.path().join("pred");
    let o = run(&[
        "bench-predict",
        "-i",
        s(&input),
        "-o",
        s(&pred),
        "--imputation-report",
        s(&out.join("imputation_report.csv")),
        "--folds",
        "3",
        "--grid-file",
        s(&grid),
        "--predictors",
        "knn,gbt",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = std::fs::read_to_string(pred.join("prediction_report.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 10);
    let tested = rows
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(4).is_some_and(|v| !v.is_empty()))
        .count();
    assert_eq!(tested, 5);
    let m = manifest(&pred.join("run_manifest.json"));
    assert_eq!(m["results"]["prediction"]["patient_disjoint"], true);
    let top: Vec<&str> = report
        .lines()
        .skip(1)
        .take(5)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    let chosen: Vec<&str> = m["config"]["imputers"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(chosen, top);
}

#[test]
fn prediction_report_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), "in.csv", "30");
    let grid = small_grid(dir.path());
    let mut reports = Vec::new();
    for jobs in ["1", "3"] {
        let out = dir.path().join(format!("j{jobs}"));
        let o = run(&[
            "bench-predict",
            "-i",
            s(&input),
            "-o",
            s(&out),
            "--imputers",
            "linear,locf",
            "--folds",
            "3",
            "--grid-file",
            s(&grid),
            "--jobs",
            jobs,
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        reports.push(std::fs::read(out.join("prediction_report.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}
