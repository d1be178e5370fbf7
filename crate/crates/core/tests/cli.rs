use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfmc-lab")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = lab(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&read(&dir.join("manifest.json"))).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn bounds_gaussian_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("g");
    ok(&["bounds-gaussian", "--out-dir", s(&dir), "--rho", "0,0.5"]);
    let csv = read(&dir.join("bounds_gaussian.csv"));
    assert!(!csv.contains('\r'));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "rho,dtc,lower,upper,mi_pair_third");
    assert_eq!(lines[1], "0,0,0,0,0");
    let v: Vec<f64> = lines[2].split(',').map(|x| x.parse().unwrap()).collect();
    let expected = [0.5, 0.2616241, 0.2027325, 0.4054651, 0.2027325];
    for (a, b) in v.iter().zip(expected) {
        assert!((a - b).abs() < 1e-7, "{a} vs {b}");
    }
    let m = manifest(&dir);
    assert_eq!(m["command"], "bounds-gaussian");
    assert_eq!(m["config"]["rho_grid"], serde_json::json!([0.0, 0.5]));
    assert_eq!(m["outputs"], serde_json::json!(["bounds_gaussian.csv"]));
}

#[test]
fn bounds_gaussian_default_grid_is_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["bounds-gaussian", "--out-dir", s(tmp.path())]);
    let csv = read(&tmp.path().join("bounds_gaussian.csv"));
    let dtc: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(dtc.len(), 20);
    assert!(dtc.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn invalid_inputs_fail() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(!lab(&["bounds-gaussian", "--out-dir", s(tmp.path()), "--rho", "1.0"]).status.success());
    assert!(!lab(&["bounds-synthetic", "--out-dir", s(tmp.path()), "--m", "2"]).status.success());
    assert!(!lab(&["bounds-synthetic", "--out-dir", s(tmp.path()), "--n", "10"]).status.success());
    assert!(!lab(&["ablation", "--out-dir", s(tmp.path()), "--objectives", "vicreg"]).status.success());
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"rho_grdi": [0.1]}"#).unwrap();
    let out = lab(&["bounds-gaussian", "--out-dir", s(tmp.path()), "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("rho_grdi"));
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"rho_grid": [0.1, 0.2]}"#).unwrap();
    let a = tmp.path().join("a");
    ok(&["bounds-gaussian", "--out-dir", s(&a), "--config", s(&cfg)]);
    assert_eq!(manifest(&a)["config"]["rho_grid"], serde_json::json!([0.1, 0.2]));
    let b = tmp.path().join("b");
    ok(&["bounds-gaussian", "--out-dir", s(&b), "--config", s(&cfg), "--rho", "0.3"]);
    assert_eq!(manifest(&b)["config"]["rho_grid"], serde_json::json!([0.3]));
}

#[test]
fn bounds_synthetic_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    ok(&["bounds-synthetic", "--out-dir", s(tmp.path()), "--n", "50", "--m", "3,4", "--seed", "7"]);
    assert!(start.elapsed() < Duration::from_secs(10));
    let m = manifest(tmp.path());
    assert_eq!(m["config"]["seeds"], serde_json::json!([7, 8, 9, 10, 11]));
    for file in ["bounds_data_a.csv", "bounds_data_b.csv"] {
        let csv = read(&tmp.path().join(file));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "m,seed,dtc_hat,lower_hat,upper_hat,bound_ok");
        assert_eq!(lines.len(), 1 + 10 + 1);
        assert!(lines.last().unwrap().starts_with("summary,"));
    }
}

#[test]
fn dump_data_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&["dump-data", "--out-dir", s(d), "--family", "data-b", "--m", "3", "--n", "5", "--seed", "3"]);
    }
    let csv = read(&a.join("data.csv"));
    assert_eq!(csv, read(&b.join("data.csv")));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "x1,x2,x3");
    assert_eq!(lines.len(), 6);
    ok(&["dump-data", "--out-dir", s(&a), "--family", "latent-class", "--n", "8"]);
    let header = read(&a.join("data.csv")).lines().next().unwrap().to_string();
    assert!(header.starts_with("m1_1,") && header.ends_with(",label"));
}

const TINY: [&str; 10] =
    ["--iterations", "6", "--batch-size", "40", "--hidden", "6", "--embed-dim", "2", "--eval-interval", "3"];

#[test]
fn estimator_compare_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["estimator-compare", "--out-dir", s(tmp.path()), "--rho", "0,0.6", "--dims", "4"];
    args.extend(["--eval-samples", "80"]);
    args.extend(TINY);
    ok(&args);
    let csv = read(&tmp.path().join("estimator_compare.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "rho,true_mi,fmca_estimate,infonce_estimate,infonce_ceiling");
    let row: Vec<f64> = lines[2].split(',').map(|x| x.parse().unwrap()).collect();
    assert!((row[1] + 2.0 * (1.0f64 - 0.36).ln()).abs() < 1e-12);
    assert!(row[3] <= row[4] && (row[4] - 40f64.ln()).abs() < 1e-12);
    assert!(tmp.path().join("estimator_trajectories.csv").exists());
    assert_eq!(manifest(tmp.path())["runs"].as_array().unwrap().len(), 4);
}

#[test]
fn ablation_rows_and_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let mut args = vec!["ablation", "--out-dir", s(d), "--objectives", "mfmc-trace,mfmc-logdet:0"];
        args.extend(["--seeds", "1,2", "--samples", "120"]);
        args.extend(TINY);
        ok(&args);
    }
    let csv = read(&a.join("ablation.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "objective,ridge,seed,final_loss,best_probe_acc,diverged,diverged_at");
    assert_eq!(lines.len(), 5);
    assert!(lines[3].starts_with("mfmc-logdet:0,0,1,"));
    assert_eq!(csv, read(&b.join("ablation.csv")));
    assert_eq!(read(&a.join("ablation_summary.csv")), read(&b.join("ablation_summary.csv")));
    assert!(a.join("runs/mfmc-trace-seed1.csv").exists());
    assert!(a.join("runs/mfmc-logdet-ridge0-seed2.csv").exists());
    let m = manifest(&a);
    assert_eq!(m["runs"].as_array().unwrap().len(), 4);
    assert_eq!(m["config"]["train"]["iterations"], 6);
}

#[test]
fn probe_on_separated_classes_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["probe", "--out-dir", s(tmp.path()), "--noise", "0.01", "--samples", "200"];
    args.extend(TINY);
    ok(&args);
    let csv = read(&tmp.path().join("probe.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "encoder,input_dim,accuracy,chance");
    for l in &lines[1..] {
        assert_eq!(l.split(',').nth(2).unwrap(), "1", "{l}");
    }
    assert!(read(&tmp.path().join("metrics.csv")).starts_with("iteration,objective,loss,term1,term2,term3"));
}
