use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;

use polyreg::ensemble::draw_instance;
use polyreg::experiment::ExperimentConfig;

fn polyreg(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_polyreg")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const LINF: &str = r#"{"name":"linf","phi":[[1,0],[0,1]],"h":{"kind":"linf","n":2},"x0":[2,1],"w":[0.1,0],"lambda":0.05}"#;
const CI_FAIL: &str = r#"{"name":"bad","phi":[[1,0]],"h":{"kind":"linf","n":2},"x0":[0,2]}"#;
const L1: &str = r#"{"name":"l1","phi":[[1,0],[0,1]],"h":{"kind":"l1","n":2},"x0":[3,0],"noise":{"sigma":0.01,"seed":4},"lambda":0.2}"#;

#[test]
fn certify_linf_identity() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "in.json", LINF);
    let out = dir.path().join("report.json");
    let (code, _, err) = polyreg(&["certify", "--in", &input, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let report = read_json(&out);
    assert_eq!(report["schema"], 1);
    let rec = &report["records"][0];
    assert_eq!(rec["ic"], 1.0);
    assert_eq!(rec["verdict"], "certified-positive");
    assert_eq!(rec["true_support"], serde_json::json!([0]));
    let x = rec["closed_form"]["x_hat"].as_array().unwrap();
    assert!((x[0].as_f64().unwrap() - 2.05).abs() < 1e-12);
    assert!(rec["closed_form"]["oracle_gap"].as_f64().unwrap() < 1e-6);
    assert_eq!(rec["noiseless_certificate"]["v"], serde_json::json!([1.0]));
}

#[test]
fn certify_records_precondition_failures_and_keeps_order() {
    let dir = TempDir::new().unwrap();
    let batch = format!(r#"{{"schema":1,"instances":[{LINF},{CI_FAIL},{L1}]}}"#);
    let input = write(dir.path(), "batch.json", &batch);
    let out = dir.path().join("report.json");
    let (code, _, _) = polyreg(&["certify", "--in", &input, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2);
    let recs = read_json(&out)["records"].as_array().unwrap().clone();
    let names: Vec<&str> = recs.iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["linf", "bad", "l1"]);
    assert_eq!(recs[0]["status"], "ok");
    assert_eq!(recs[1]["status"], "precondition-failure");
    assert_eq!(recs[2]["status"], "ok");
    assert_eq!(recs[2]["seed"], 4);
}

#[test]
fn certify_restricted_injectivity_failure() {
    // Phi kills the second coordinate, which is the model direction of the
    // face of x0 = (2, 0) under the l-infinity gauge.
    let dir = TempDir::new().unwrap();
    let text = r#"{"phi":[[1,0]],"h":{"kind":"linf","n":2},"x0":[2,0]}"#;
    let input = write(dir.path(), "in.json", text);
    let (code, stdout, _) = polyreg(&["certify", "--in", &input]);
    assert_eq!(code, 2);
    let report: Value = serde_json::from_str(&stdout).unwrap();
    let rec = &report["records"][0];
    assert_eq!(rec["status"], "precondition-failure");
    assert_eq!(rec["restricted_injectivity"], false);
}

#[test]
fn hard_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "in.json", "{not json");
    assert_eq!(polyreg(&["certify", "--in", &input]).0, 1);
    let missing = dir.path().join("nope.json");
    assert_eq!(polyreg(&["certify", "--in", missing.to_str().unwrap()]).0, 1);
    // A dimension error inside one record is a hard failure.
    let bad = write(dir.path(), "bad.json", r#"{"phi":[[1,0,0]],"h":{"kind":"l1","n":2},"x0":[1,0]}"#);
    assert_eq!(polyreg(&["certify", "--in", &bad]).0, 1);
}

fn solve_x(input: &str, method: &str, lambda: &str) -> (Vec<f64>, Value) {
    let (code, stdout, err) = polyreg(&["solve", "--in", input, "--method", method, "--lambda", lambda]);
    assert_eq!(code, 0, "{err}");
    let report: Value = serde_json::from_str(&stdout).unwrap();
    let rec = report["records"][0].clone();
    let x = rec["x"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    (x, rec)
}

#[test]
fn solve_methods_agree_on_soft_threshold_instance() {
    let dir = TempDir::new().unwrap();
    let text = r#"{"phi":[[1,0,0],[0,1,0],[0,0,1]],"h":{"kind":"l1","n":3},"x0":[2,-1.5,0],"w":[0.05,-0.02,0.03]}"#;
    let input = write(dir.path(), "in.json", text);
    let (cf, rec) = solve_x(&input, "closed-form", "0.1");
    let (qp, _) = solve_x(&input, "qp", "0.1");
    // Soft thresholding of y = (2.05, -1.52, 0.03) at 0.1.
    let expected = [1.95, -1.42, 0.0];
    for i in 0..3 {
        assert!((cf[i] - expected[i]).abs() < 1e-12);
        assert!((cf[i] - qp[i]).abs() < 1e-6);
    }
    assert_eq!(rec["verdict"], "certified-positive");
}

#[test]
fn lp0_recovers_noiseless_certified_instance() {
    let family = polyreg::ensemble::Family::L1 { n: 6, sparsity: 1 };
    let h = family.build().unwrap();
    // First seed whose instance has a positive criterion.
    let inst = (0..)
        .map(|seed| draw_instance(&family, 5, seed))
        .find(|inst| {
            polyreg::experiment::prepare(&h, inst.clone()).is_ok_and(|p| p.cert.ic_value > 1e-8)
        })
        .unwrap();
    let rows: Vec<Vec<f64>> = inst.phi.row_iter().map(|r| r.iter().copied().collect()).collect();
    let text = serde_json::json!({
        "phi": rows,
        "h": {"kind": "l1", "n": 6},
        "x0": inst.x0.iter().copied().collect::<Vec<_>>(),
    })
    .to_string();
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "in.json", &text);
    let (code, stdout, _) = polyreg(&["certify", "--in", &input]);
    assert_eq!(code, 0);
    let cert: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(cert["records"][0]["verdict"], "certified-positive");
    let (x, _) = solve_x(&input, "lp0", "1");
    let err: f64 = x.iter().zip(inst.x0.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(err < 1e-8, "error {err}");
}

#[test]
fn closed_form_outside_range_is_inconclusive() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "in.json", LINF);
    // The admissible range for this instance is (0, 0.55).
    let (_, rec) = solve_x(&input, "closed-form", "0.7");
    assert_eq!(rec["verdict"], "inconclusive");
    assert!(rec["reason"].as_str().unwrap().contains("outside"));
    let (_, rec) = solve_x(&input, "closed-form", "0.05");
    assert_eq!(rec["verdict"], "certified-positive");
}

#[test]
fn solve_needs_lambda_for_qp() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "in.json", CI_FAIL);
    let (code, stdout, _) = polyreg(&["solve", "--in", &input, "--method", "qp"]);
    assert_eq!(code, 1);
    let report: Value = serde_json::from_str(&stdout).unwrap();
    assert!(report["records"][0]["message"].as_str().unwrap().contains("lambda"));
}

fn run_experiment(kind: &str, config: &str, seed: &str, out: &Path) -> String {
    let (code, stdout, err) = polyreg(&[
        "experiment", "--kind", kind, "--config", config, "--seed", seed, "--out-dir", out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    stdout
}

#[test]
fn experiments_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "cfg.json",
        r#"{"family":{"kind":"l1","n":6,"sparsity":2},"q":5,"count":6}"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_experiment("support-recovery", &cfg, "42", &a);
    run_experiment("support-recovery", &cfg, "42", &b);
    for f in ["support-recovery.csv", "support-recovery.summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    run_experiment("support-recovery", &cfg, "43", &c);
    assert_ne!(fs::read(a.join("support-recovery.csv")).unwrap(), fs::read(c.join("support-recovery.csv")).unwrap());
}

#[test]
fn csv_rows_carry_regenerating_seeds() {
    let dir = TempDir::new().unwrap();
    let cfg_text = r#"{"family":{"kind":"linf","n":5,"saturated":2},"q":5,"count":4}"#;
    let cfg = write(dir.path(), "cfg.json", cfg_text);
    run_experiment("support-recovery", &cfg, "7", dir.path());
    let mut reader = csv::Reader::from_path(dir.path().join("support-recovery.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert_eq!(&headers[0], "instance");
    assert_eq!(&headers[1], "seed");
    let parsed: ExperimentConfig = serde_json::from_str(cfg_text).unwrap();
    let family = parsed.family.unwrap();
    let h = family.build().unwrap();
    for rec in reader.records() {
        let rec = rec.unwrap();
        let seed: u64 = rec[1].parse().unwrap();
        let ic: f64 = rec[2].parse().unwrap();
        // Regenerate the row's instance from its seed alone.
        let p = polyreg::experiment::prepare(&h, draw_instance(&family, 5, seed)).unwrap();
        assert_eq!(p.cert.ic_value, ic);
    }
    let summary = read_json(&dir.path().join("support-recovery.summary.json"));
    assert_eq!(summary["prng"], "chacha8");
    assert_eq!(summary["metric"], 1.0);
    assert_eq!(summary["accepted"], 4);
}

#[test]
fn noise_scaling_on_linf_identity_instance() {
    let dir = TempDir::new().unwrap();
    let cfg = format!(r#"{{"instance":{LINF},"count":5,"sigma":0.05}}"#);
    let cfg = write(dir.path(), "cfg.json", &cfg);
    run_experiment("noise-scaling", &cfg, "1", dir.path());
    let mut reader = csv::Reader::from_path(dir.path().join("noise-scaling.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 20);
    let ratio_col = reader.headers().unwrap().iter().position(|h| h == "error_ratio").unwrap();
    for group in rows.chunks(4) {
        let ratios: Vec<f64> = group.iter().map(|r| r[ratio_col].parse().unwrap()).collect();
        let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(*r), hi.max(*r)));
        assert!((hi - lo) / lo <= 0.10, "{ratios:?}");
    }
    let summary = read_json(&dir.path().join("noise-scaling.summary.json"));
    assert!(summary["metric"].as_f64().unwrap() <= 0.10);
}

#[test]
fn negative_ic_small_run() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "cfg.json",
        r#"{"family":{"kind":"l1","n":8,"sparsity":3},"q":5,"count":3,"noise_to_lambda":0.001}"#,
    );
    run_experiment("negative-ic", &cfg, "5", dir.path());
    let summary = read_json(&dir.path().join("negative-ic.summary.json"));
    assert_eq!(summary["metric"], 1.0);
}

#[test]
fn experiment_config_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "cfg.json", r#"{"family":{"kind":"l1","n":6,"sparsity":9},"q":5,"count":2}"#);
    let (code, _, err) = polyreg(&[
        "experiment", "--kind", "support-recovery", "--config", &cfg, "--seed", "1", "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("inconsistent"));
}
