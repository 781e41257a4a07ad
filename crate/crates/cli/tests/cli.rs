use std::path::Path;
use std::process::{Command, Output};

use dpsecmul::experiments::gap_rows;
use dpsecmul_core::schemes::{build_layered, build_shamir_real};
use dpsecmul_core::{LayeredParams, NoiseKind};
use serde_json::Value;

fn dpsecmul(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpsecmul"))
        .args(args)
        .current_dir(dir)
        .env_remove("DPSECMUL_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn csv_starts_with_config_hash_comment() {
    let dir = tempfile::tempdir().unwrap();
    let o = dpsecmul(&["gap", "--set", "n_values=10,100"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("# config-hash="));
    assert!(first.contains("n_values=10,100") && first.contains("seed=0"));
    assert_eq!(text.lines().nth(1).unwrap(), "t,n,snr_p_actual,snr_a,gap_vs_target,gap_vs_actual");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 3] = [
        &["matrix", "--set", "n_samples=4000", "--seed", "3", "--workers", "3"],
        &["precision", "--set", "delta_log2=-2,-4", "--set", "min_samples=4000", "--seed", "3"],
        &["converse", "--set", "n_codes=50", "--seed", "3"],
    ];
    for args in runs {
        let a = dpsecmul(args, dir.path());
        let b = dpsecmul(args, dir.path());
        assert_eq!(a.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&a.stderr));
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "# converse settings\nn_codes=5\nseed=11\n").unwrap();
    let seed_of = |o: &Output| -> String {
        let v: Value = serde_json::from_str(&stdout(o)).unwrap();
        v["config"]["seed"].as_str().unwrap().to_string()
    };
    let file_only = dpsecmul(&["converse", "--config", "run.cfg"], dir.path());
    assert_eq!(seed_of(&file_only), "11");
    let flag = dpsecmul(&["converse", "--config", "run.cfg", "--seed", "12"], dir.path());
    assert_eq!(seed_of(&flag), "12");
    let env = Command::new(env!("CARGO_BIN_EXE_dpsecmul"))
        .args(["converse", "--set", "n_codes=5"])
        .env("DPSECMUL_SEED", "13")
        .output()
        .unwrap();
    assert_eq!(seed_of(&env), "13");
}

#[test]
fn unknown_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dpsecmul(&["tradeoff", "--set", "epsilon=1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key"));
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = dpsecmul(&["tradeoff", "--out", "curves.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    assert!(text.contains("complex_three_node"));
}

#[test]
fn failed_check_sets_exit_code() {
    // Growing n from 10 to 10 is not a decrease, so the gap check fails.
    let dir = tempfile::tempdir().unwrap();
    let o = dpsecmul(&["gap", "--set", "n_values=10,10", "--set", "t_values=2"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("check FAILED"));
}

#[test]
fn exported_scheme_reproduces_its_sweep_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = dpsecmul(&["gap", "--set", "t_values=2", "--set", "n_values=100", "--set", "scheme_dir=s"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let e = dpsecmul(&["eval", "s/layered_t2_n100.json", "--set", "t=2"], dir.path());
    assert_eq!(e.status.code(), Some(0), "{}", String::from_utf8_lossy(&e.stderr));
    let v: Value = serde_json::from_str(&stdout(&e)).unwrap();
    let row = &gap_rows(&[2], &[100.0], 1.0).unwrap()[0];
    assert_eq!(v["privacy"]["snr_p"].as_f64().unwrap(), row.snr_p);
    assert_eq!(v["accuracy"]["snr_a"].as_f64().unwrap(), row.snr_a);
    assert!(v.get("converse").is_some());
}

#[test]
fn honest_majority_scheme_omits_converse() {
    let dir = tempfile::tempdir().unwrap();
    let code = build_shamir_real(3, 1, &[1.0, 2.0, 3.0], 1.0, 1.0).unwrap();
    std::fs::write(dir.path().join("shamir.json"), code.to_json()).unwrap();
    let e = dpsecmul(&["eval", "shamir.json"], dir.path());
    assert_eq!(e.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&e)).unwrap();
    assert!(v.get("converse").is_none());
    assert!(v["notice"].as_str().unwrap().contains("converse omitted"));
    assert_eq!(v["accuracy"]["snr_a"], "inf");
}

#[test]
fn doubled_noise_variance_halves_single_node_snr() {
    let dir = tempfile::tempdir().unwrap();
    let p = LayeredParams::new(1, 0.8, 0.05, 0.0);
    let code = build_layered(&p, NoiseKind::UnitGaussianAnalysis, 1.0).unwrap();
    let text = code.to_json();
    std::fs::write(dir.path().join("a.json"), &text).unwrap();
    std::fs::write(dir.path().join("b.json"), text.replace("\"variance\": 1.0", "\"variance\": 2.0")).unwrap();
    let snr = |f: &str| -> f64 {
        let v: Value = serde_json::from_str(&stdout(&dpsecmul(&["eval", f], dir.path()))).unwrap();
        v["privacy"]["snr_p"].as_f64().unwrap()
    };
    let (a, b) = (snr("a.json"), snr("b.json"));
    assert!((a / b - 2.0).abs() < 1e-12, "{a} {b}");
}

#[test]
fn malformed_scheme_reports_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\n  \"n_nodes\": 2,\n  \"eta\": ,\n}").unwrap();
    let e = dpsecmul(&["eval", "bad.json"], dir.path());
    assert_eq!(e.status.code(), Some(2));
    let err = String::from_utf8_lossy(&e.stderr);
    assert!(err.contains("line 3 column"), "{err}");
}
