use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ssmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssmc")).args(args).output().expect("binary runs")
}

fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.remove("seconds");
            m.remove("total_seconds");
            m.values_mut().for_each(strip_timing);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn simulated(dir: &Path, model: &str, n: &str) -> String {
    let path = dir.join(format!("{model}.csv"));
    let p = path.to_str().unwrap().to_string();
    let out = ssmc(&["simulate", "--model", model, "--n", n, "--seed", "3", "--out", &p]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    p
}

#[test]
fn estimate_prints_expected_keys() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), "ar1", "500");
    let out = ssmc(&["estimate", "--input", &data, "--method", "contrast"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["theta_hat", "sigma_matrix", "ci", "seconds"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let phi = v["theta_hat"]["phi"].as_f64().unwrap();
    assert!(phi.abs() < 1.0);
    assert!(v["ci"][0]["lo"].as_f64().unwrap() < v["ci"][0]["hi"].as_f64().unwrap());

    let out = ssmc(&["estimate", "--input", &data, "--method", "qml"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["sigma_matrix"].is_null());
}

#[test]
fn ingest_three_prices() {
    let dir = tempfile::tempdir().unwrap();
    let prices = dir.path().join("p.csv");
    std::fs::write(&prices, "price\n100\n101\n100.5\n").unwrap();
    let out = ssmc(&["ingest", "--input", prices.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3, "header plus two observations:\n{text}");
}

#[test]
fn malformed_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "z\n1.0\nnot-a-number\n").unwrap();
    let out = ssmc(&["estimate", "--input", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "input");

    assert_eq!(ssmc(&["estimate", "--input", "/nonexistent.csv"]).status.code(), Some(1));
    assert_eq!(ssmc(&["estimate", "--bogus-flag"]).status.code(), Some(1));
    assert_eq!(ssmc(&["mc-study", "--methods", "nope", "--reps", "1"]).status.code(), Some(1));
}

#[test]
fn mc_study_smoke_and_reproducible() {
    let args = [
        "mc-study", "--model", "sv", "--methods", "contrast,qml,bootstrap", "--reps", "20", "--n", "200", "--particles",
        "200", "--seed", "11",
    ];
    let a = ssmc(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = ssmc(&args);
    let mut va: Value = serde_json::from_slice(&a.stdout).unwrap();
    let mut vb: Value = serde_json::from_slice(&b.stdout).unwrap();
    assert_eq!(va["records"].as_array().unwrap().len(), 60);
    assert_eq!(va["summaries"].as_array().unwrap().len(), 3);
    strip_timing(&mut va);
    strip_timing(&mut vb);
    assert_eq!(va, vb);
}

#[test]
fn simulate_is_byte_reproducible() {
    let a = ssmc(&["simulate", "--n", "50", "--seed", "9"]);
    let b = ssmc(&["simulate", "--n", "50", "--seed", "9"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, ssmc(&["simulate", "--n", "50", "--seed", "10"]).stdout);
}
