use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"{
    "trait_domain": [0, 1],
    "rates": {"family": "constant", "params": {"birth": 2, "death": 1}},
    "kernel": {"family": "uniform"},
    "p": 0.3, "c": 1,
    "grids": {"nx": 16, "da": 0.02, "tol": 1e-8},
    "seed": 7
}"#;

fn structpop(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_structpop"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("{e}: {text}"))
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn missing_config_is_usage_error_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = structpop(&["malthus", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "usage");
    assert!(!dir.path().join("o").exists());

    let out = structpop(&["pde", "--config", "nowhere.json", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(structpop(&["bogus"], dir.path()).status.code(), Some(2));
}

#[test]
fn bad_config_reports_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("\"p\": 0.3", "\"q\": 0.3"));
    let out = structpop(&["malthus", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "config");
}

#[test]
fn subcritical_model_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("\"birth\": 2", "\"birth\": 0.5"));
    let out = structpop(&["malthus", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"]["kind"], "subcritical");
}

#[test]
fn constant_scenario_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let out = structpop(&["scenario", "constant", "--verify", "--out", "o", "--tmax", "5"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("o");
    let s = summary(&o);
    assert!((s["lambda_star"].as_f64().unwrap() - 1.0).abs() <= 1e-3);
    assert_eq!(s["regime"], "Regular");
    assert_eq!(s["details"]["checks_passed"], true);
    for f in s["manifest"].as_array().unwrap() {
        let len = fs::metadata(o.join(f.as_str().unwrap())).unwrap().len();
        assert!(len > 0, "{f} empty");
    }
    let checks: Value = serde_json::from_str(&fs::read_to_string(o.join("verify.json")).unwrap()).unwrap();
    assert!(checks["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn singular_scenario_refuses_convergence_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = structpop(
        &["scenario", "singular", "--nx", "800", "--age-stride", "100", "--out", "o"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("o");
    let s = summary(&o);
    assert!((s["lambda_star"].as_f64().unwrap() - 2.8).abs() <= 0.05);
    assert_eq!(s["regime"], "PossiblySingular");
    assert!(s["details"]["convergence_report"].as_str().unwrap().starts_with("refused"));
    assert!(!o.join("pde_trace.csv").exists());
    let refinement = fs::read_to_string(o.join("refinement.csv")).unwrap();
    let mut lines = refinement.lines();
    assert_eq!(lines.next(), Some("n_x,lambda_star_h,gap,mass_in_band"));
    let nx: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(nx, ["100", "200", "400", "800"]);
}

#[test]
fn verify_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for o in ["a", "b"] {
        let out = structpop(&["verify", "--config", &cfg, "--out", o], dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read(dir.path().join("a/summary.json")).unwrap();
    let b = fs::read(dir.path().join("b/summary.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ibm_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let args = |o: &'static str| {
        vec![
            "ibm", "--config", cfg.as_str(), "--out", o, "--scale", "100", "--replicates", "4", "--tmax", "2",
        ]
    };
    for o in ["a", "b"] {
        let out = structpop(&args(o), dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["ibm_trace.csv", "ibm_linear_trace.csv", "summary.json"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let trace = fs::read_to_string(dir.path().join("a/ibm_linear_trace.csv")).unwrap();
    assert!(trace.starts_with("replicate,t,mass,V\n"));
    // 4 replicates with 11 sample times each.
    assert_eq!(trace.lines().count(), 1 + 4 * 11);
}

#[test]
fn spectral_sweep_is_decreasing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = structpop(&["spectral", "--config", &cfg, "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("o/rho_curve.csv")).unwrap();
    let rows: Vec<Vec<String>> = text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 21);
    let rho: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    for (r, row) in rho.iter().zip(&rows) {
        let dual: f64 = row[2].parse().unwrap();
        assert!((r - dual).abs() <= 1e-10 * r);
    }
    assert!(rho.windows(2).all(|w| w[1] < w[0]));
    assert!(dir.path().join("o/kernel_k.csv").exists());
}

#[test]
fn stationary_and_pde_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = structpop(&["pde", "--config", &cfg, "--out", "o", "--tmax", "4"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(dir.path().join("o/pde_trace.csv")).unwrap();
    assert!(trace.starts_with("t,mass,tv_to_stationary,phi_dist,invariant,D_t,truncation_loss\n"));
    assert!(!trace.contains('\r'));

    let out = structpop(&["stationary", "--config", &cfg, "--out", "s"], dir.path());
    assert!(out.status.success());
    let s = summary(&dir.path().join("s"));
    assert!((s["mass"].as_f64().unwrap() - s["lambda_star"].as_f64().unwrap()).abs() < 1e-8);
}
