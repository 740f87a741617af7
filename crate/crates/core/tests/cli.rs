use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cpkl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpkl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write(path: &Path, text: &str) -> String {
    fs::write(path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn generate_small(dir: &Path) -> String {
    let config = write(
        &dir.join("gen.json"),
        r#"{"dims": [10, 12, 14], "rank": 3, "samples": 20000, "seed": 5}"#,
    );
    let out = dir.join("data");
    let o = cpkl(&[
        "generate",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.to_str().unwrap().to_string()
}

#[test]
fn generate_writes_tensor_truth_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_small(dir.path());
    let data = Path::new(&data);
    let coo = fs::read_to_string(data.join("tensor.coo")).unwrap();
    assert!(coo.starts_with("3 10 12 14"));
    let truth = json(&data.join("truth.json"));
    assert_eq!(truth["R"], 3);
    let lambda_sum: f64 = truth["lambda"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .sum();
    assert_eq!(lambda_sum, 20000.0);
    let manifest = json(&data.join("manifest.json"));
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn single_sample_gives_one_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        &dir.path().join("gen.json"),
        r#"{"dims": [4, 5, 6], "rank": 2, "samples": 1}"#,
    );
    let out = dir.path().join("out");
    let o = cpkl(&[
        "generate",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let coo = fs::read_to_string(out.join("tensor.coo")).unwrap();
    let data_lines: Vec<&str> = coo
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .collect();
    assert_eq!(data_lines.len(), 1);
    assert!(data_lines[0].ends_with(" 1"));
}

#[test]
fn missing_dims_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        &dir.path().join("gen.json"),
        r#"{"rank": 2, "samples": 10}"#,
    );
    let o = cpkl(&[
        "generate",
        "--config",
        &config,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dims"));
}

#[test]
fn invalid_method_is_a_usage_error() {
    let o = cpkl(&[
        "factorize",
        "--tensor",
        "x.coo",
        "--out",
        "o",
        "--rank",
        "2",
        "--method",
        "newton",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn factorize_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_small(dir.path());
    let tensor = format!("{data}/tensor.coo");
    let fit_dir = dir.path().join("fit");
    let o = cpkl(&[
        "factorize",
        "--tensor",
        &tensor,
        "--out",
        fit_dir.to_str().unwrap(),
        "--method",
        "pqnr",
        "--rank",
        "3",
        "--tau",
        "1e-4",
        "--seed",
        "0",
        "--workers",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json(&fit_dir.join("summary.json"));
    assert_eq!(summary["converged"], true);
    assert_eq!(summary["method"], "pqnr");
    let trace = fs::read_to_string(fit_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("outer,mode_kkt_max,objective"));
    let manifest = json(&fit_dir.join("manifest.json"));
    assert_eq!(manifest["config"]["rank"], 3);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 1);

    let eval_dir = dir.path().join("eval");
    let o = cpkl(&[
        "evaluate",
        "--model",
        fit_dir.join("model.json").to_str().unwrap(),
        "--truth",
        &format!("{data}/truth.json"),
        "--tensor",
        &tensor,
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&eval_dir.join("report.json"));
    assert!(report["score"]["score"].as_f64().unwrap() > 0.9);
    assert!(report["kkt"]["max"].as_f64().unwrap() <= 1e-4);
    assert_eq!(report["zeros"]["thresholded"].as_array().unwrap().len(), 3);
    let printed: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(printed, report);
}

#[test]
fn mode1_only_reaches_tight_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_small(dir.path());
    let out = dir.path().join("fit");
    let o = cpkl(&[
        "factorize",
        "--tensor",
        &format!("{data}/tensor.coo"),
        "--out",
        out.to_str().unwrap(),
        "--method",
        "pdnr",
        "--rank",
        "3",
        "--tau",
        "1e-8",
        "--mode1-only",
        "--strict",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json(&out.join("summary.json"));
    assert!(summary["final_kkt"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn strict_reports_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_small(dir.path());
    let out = dir.path().join("fit");
    let tensor = format!("{data}/tensor.coo");
    let args = [
        "factorize",
        "--tensor",
        &tensor,
        "--out",
        out.to_str().unwrap(),
        "--method",
        "mu",
        "--rank",
        "3",
        "--tau",
        "1e-8",
        "--outer-max",
        "3",
    ];
    let o = cpkl(&args);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&out.join("summary.json"))["converged"], false);
    let mut strict = args.to_vec();
    strict.push("--strict");
    assert_eq!(cpkl(&strict).status.code(), Some(1));
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_small(dir.path());
    let config = write(
        &dir.path().join("fit.json"),
        r#"{"rank": 2, "method": "pdnr", "outer_max": 7}"#,
    );
    let out = dir.path().join("fit");
    let o = cpkl(&[
        "factorize",
        "--tensor",
        &format!("{data}/tensor.coo"),
        "--out",
        out.to_str().unwrap(),
        "--config",
        &config,
        "--rank",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["rank"], 3);
    assert_eq!(manifest["config"]["outer_max"], 7);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_small(dir.path());
    let config = write(
        &dir.path().join("fit.json"),
        r#"{"rank": 2, "learning_rate": 0.1}"#,
    );
    let o = cpkl(&[
        "factorize",
        "--tensor",
        &format!("{data}/tensor.coo"),
        "--out",
        dir.path().to_str().unwrap(),
        "--config",
        &config,
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reruns_are_identical_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_small(dir.path());
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let o = cpkl(&[
            "factorize",
            "--tensor",
            &format!("{data}/tensor.coo"),
            "--out",
            out.to_str().unwrap(),
            "--rank",
            "3",
            "--seed",
            "9",
            "--workers",
            workers,
        ]);
        assert!(o.status.success());
        out
    };
    let a = run("a", "1");
    let b = run("b", "4");
    assert_eq!(
        fs::read(a.join("model.json")).unwrap(),
        fs::read(b.join("model.json")).unwrap()
    );
    let ma = json(&a.join("manifest.json"));
    let mb = json(&b.join("manifest.json"));
    assert_ne!(ma["config_hash"], mb["config_hash"]);
    assert_eq!(ma["inputs"], mb["inputs"]);
}

#[test]
fn bench_writes_one_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        &dir.path().join("bench.json"),
        r#"{"generate": {"dims": [8, 9, 10], "rank": 2, "samples": 5000, "seed": 1},
            "ranks": [2, 3], "seeds": [0, 1, 2], "tau": 1e-3, "outer_max": 40}"#,
    );
    let out = dir.path().join("bench");
    let o = cpkl(&["bench", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,rank,seed,converged,outer_iterations,time_to_tau,final_objective,exact_zeros"
    );
    assert_eq!(lines.count(), 18);
    assert!(out.join("manifest.json").exists());
}
