use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdvmaps"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn coeffs(v: &Value) -> Vec<f64> {
    v["r"]["coeffs"].as_array().unwrap().iter().map(|c| c[0].as_f64().unwrap()).collect()
}

#[test]
fn simulate_fixed_point_grid() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["simulate", "--fixture", "fixed-point"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&d.path().join("u.csv"));
    assert_eq!(rows.len(), 25);
    for r in rows {
        let (m, n): (f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap());
        let (re, im): (f64, f64) = (r[2].parse().unwrap(), r[3].parse().unwrap());
        assert!((re + 3f64.sqrt() * (m + n)).abs() < 1e-12 && im.abs() < 1e-12, "{r:?}");
    }
    let side = json(&d.path().join("simulate.json"));
    assert_eq!(side["residual"]["max"].as_f64().unwrap(), 0.0);
    assert_eq!(side["corners"].as_array().unwrap().len(), 4);
    assert_eq!(side["branches"]["flow1"]["sigma"], "-");
}

#[test]
fn simulate_empty_grid_is_one_row() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"model":"lpkdv","N":1,"alpha":[[2,0]],"p0":[[1,0]],"q0":[[1,0]],
        "beta1":[-1,0],"beta2":[-1,0],"sigma1":-1,"sigma2":-1,"M":0,"N_steps":0}"#;
    let path = write_config(d.path(), cfg);
    let o = run(d.path(), &["simulate", "--config", &path]);
    assert_eq!(code(&o), 0);
    assert_eq!(csv_rows(&d.path().join("u.csv")), vec![vec!["0", "0", "0.0", "0.0"]]);
}

#[test]
fn simulate_random_lpmkdv_is_accurate_and_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let path = write_config(d.path(), r#"{"model":"lpmkdv","N":2,"M":10,"N_steps":10}"#);
    let o = run(d.path(), &["simulate", "--config", &path, "--seed", "42"]);
    assert_eq!(code(&o), 0);
    let side = json(&d.path().join("simulate.json"));
    assert!(side["residual"]["max"].as_f64().unwrap() <= 1e-8);
    let first = fs::read(d.path().join("u.csv")).unwrap();
    run(d.path(), &["simulate", "--config", &path, "--seed", "42"]);
    assert_eq!(fs::read(d.path().join("u.csv")).unwrap(), first);
}

#[test]
fn simulate_failure_names_the_site() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["simulate", "--fixture", "lpmkdv-unit"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("(m, n) = (0, 1)"));
}

#[test]
fn verify_default_suite_passes() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["verify", "--seed", "42"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let rep = json(&d.path().join("report.json"));
    assert_eq!(rep["passed"], true);
    for c in rep["checks"].as_array().unwrap() {
        assert!(c["residual"].as_f64().unwrap() <= c["tolerance"].as_f64().unwrap());
    }
}

#[test]
fn verify_reports_corrupted_map() {
    let d = tempfile::tempdir().unwrap();
    let path = write_config(d.path(), r#"{"model":"lskdv","N":2,"corrupt_map":true,"checks":["conservation","lattice"]}"#);
    let o = run(d.path(), &["verify", "--config", &path]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("conservation"), "{err}");
}

#[test]
fn config_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    let path = write_config(d.path(), r#"{"model":"lpkdv","N":"#);
    assert_eq!(code(&run(d.path(), &["verify", "--config", &path])), 2);
    assert_eq!(code(&run(d.path(), &["verify", "--fixture", "nonexistent"])), 2);
    assert_eq!(code(&run(d.path(), &["curve", "--config", "/nonexistent/config.json"])), 2);
}

#[test]
fn curve_fixtures_and_genus() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(d.path(), &["curve", "--fixture", "fixed-point"])), 0);
    let v = json(&d.path().join("curve.json"));
    let want = [-2.0, 5.0, -4.0, 1.0];
    assert!(coeffs(&v).iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12), "{v}");
    assert_eq!(v["degenerate"], true);

    assert_eq!(code(&run(d.path(), &["curve", "--fixture", "lpmkdv-unit"])), 0);
    let v = json(&d.path().join("curve.json"));
    let got = coeffs(&v);
    let lead = got[2];
    let want = [16.0, -8.0, 1.0];
    assert!(got.iter().zip(want).all(|(a, b)| (a / lead - b).abs() < 1e-12), "{v}");
    assert_eq!(v["degenerate"], true);

    for (model, genus) in [("lpkdv", 2), ("lpmkdv", 1), ("lskdv", 2)] {
        let path = write_config(d.path(), &format!(r#"{{"model":"{model}","N":2}}"#));
        assert_eq!(code(&run(d.path(), &["curve", "--config", &path])), 0);
        assert_eq!(json(&d.path().join("curve.json"))["genus"], genus, "{model}");
    }
}

#[test]
fn jacobi_genus_one() {
    let d = tempfile::tempdir().unwrap();
    let path = write_config(d.path(), r#"{"model":"lpkdv","N":1,"steps":10}"#);
    let o = run(d.path(), &["jacobi", "--config", &path]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&d.path().join("jacobi.csv"));
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[0], vec!["0", "0.0"]);
    assert!(rows.iter().all(|r| r[1].parse::<f64>().unwrap() <= 1e-6));
    let side = json(&d.path().join("jacobi.json"));
    assert_eq!(side["B"].as_array().unwrap().len(), 1);
    assert!(side["candidates"].as_array().unwrap().len() >= 2);
}

#[test]
fn jacobi_degenerate_curve() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["jacobi", "--fixture", "fixed-point"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("degenerate curve"));
}
