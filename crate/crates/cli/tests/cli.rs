use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_torsionlab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("TORSIONLAB_OUT")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_ellipse_reports_the_centre_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--domain", "ellipse", "--N", "8", "--h", "1/64"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&dir.path().join("torsion_max.json"));
    let v = r["max"]["v_star"].as_f64().unwrap();
    assert!((v - 0.125 * 64.0 / 65.0).abs() < 1e-4, "{v}");
    assert!(dir.path().join("torsion_field.csv").exists());
    let cfg = json(&dir.path().join("config.json"));
    assert_eq!(cfg["target_h"], "1/64");
    assert_eq!(cfg["kind"], "ellipse");
}

#[test]
fn solve_rectangle_matches_the_series() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--domain", "rectangle", "--N", "4"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let v = json(&dir.path().join("torsion_max.json"))["max"]["v_star"].as_f64().unwrap();
    let exact = torsionlab::closed_forms::torsion_rectangle(4.0, 0.0, 0.5, 1e-12).unwrap();
    assert!((v - exact).abs() <= 5e-4, "{v} vs {exact}");
}

#[test]
fn missing_length_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--domain", "ellipse"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("--N") && err.contains("Usage"), "{err}");
}

#[test]
fn invalid_spacing_and_unknown_domain_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["solve", "--domain", "rectangle", "--N", "4", "--h", "1/8"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["solve", "--domain", "square", "--N", "4"], dir.path()).status.code(), Some(2));
}

#[test]
fn eigen_rectangle_matches_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["eigen", "--domain", "rectangle", "--N", "8"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let lambda = json(&dir.path().join("eigen_report.json"))["eigen"]["lambda"].as_f64().unwrap();
    let exact = std::f64::consts::PI.powi(2) * (1.0 + 1.0 / 64.0);
    assert!((lambda - exact).abs() / exact < 1e-3, "{lambda}");
}

#[test]
fn eigen_maximum_lies_in_the_inner_interval() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["eigen", "--domain", "omega1", "--N", "16"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&dir.path().join("eigen_report.json"))["x1_in_half_interval"], true);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"").unwrap();
    let o = run(&["eigen", "--domain", "omega1", "--N", "16"], &blocker.join("sub"));
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn verify_kernel_reports_the_poisson_identity() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "kernel"], dir.path());
    let r = json(&dir.path().join("verify_kernel.json"));
    let verdicts = r["verdicts"].as_array().unwrap();
    let poisson: Vec<&Value> = verdicts
        .iter()
        .filter(|v| v["criterion"].as_str().unwrap().starts_with("exponential side"))
        .collect();
    assert_eq!(poisson.len(), 3);
    for v in poisson {
        assert_eq!(v["passed"], true);
        assert_eq!(v["hi"].as_f64(), Some(1e-10));
    }
    let all_pass = verdicts.iter().all(|v| v["passed"] == true);
    assert_eq!(o.status.code(), Some(if all_pass { 0 } else { 1 }));
}

#[test]
fn verify_approx_measures_inverse_square_decay() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "approx", "--domain", "omega2", "--N-list", "16,32,64"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let slope = json(&dir.path().join("verify_approx.json"))["metrics"]["slope_sup_error"].as_f64().unwrap();
    assert!((slope + 2.0).abs() <= 0.5, "{slope}");
    assert!(dir.path().join("verify_approx_errors.csv").exists());
    assert!(dir.path().join("verify_approx_errors.dat").exists());
}

#[test]
fn config_file_values_yield_to_flags_and_outputs_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"kind": "rectangle", "N": 64, "target_h": "1/32"}"#).unwrap();
    let out = dir.path().join("out");
    let args = ["solve", "--config", cfg.to_str().unwrap(), "--N", "16"];
    assert_eq!(run(&args, &out).status.code(), Some(0));
    let echo = json(&out.join("config.json"));
    assert_eq!(echo["N"].as_f64(), Some(16.0));
    assert_eq!(echo["target_h"], "1/32");
    let first: Vec<Vec<u8>> =
        ["torsion_field.csv", "torsion_max.json", "config.json"].iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect();
    assert_eq!(run(&args, &out).status.code(), Some(0));
    let second: Vec<Vec<u8>> =
        ["torsion_field.csv", "torsion_max.json", "config.json"].iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect();
    assert_eq!(first, second);
}

#[test]
fn output_directory_defaults_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_torsionlab"))
        .args(["kernel", "check-poisson", "--a", "1"])
        .env("TORSIONLAB_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("poisson_check.json").exists());
}
