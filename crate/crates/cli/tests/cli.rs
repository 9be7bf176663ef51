use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn moire(dir: &Path, args: &[&str], config: &str) -> Output {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_moire"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir)
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_fermi_velocity_exits_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = moire(dir.path(), &["bands"], "[model]\nw_ab = 0.1\neps = 0.1\n");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.vf"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_all_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = moire(dir.path(), &["bands"], "[model]\nvf = 1.0\nwAA = 0.1\n[numerics]\nlamda = 2.0\n");
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("model.wAA") && e.contains("numerics.lamda"), "{e}");
}

#[test]
fn free_dirac_dos_exact_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[model]\nhamiltonian = \"free\"\nvf = 1.0\neps_list = [0.1]\n\
               [numerics]\nf = \"bump\"\nf_center = 0.06\nf_half_width = 0.04\nlambda = 0.8\nkgrid = 24\n";
    let o = moire(dir.path(), &["dos-exact"], cfg);
    assert!(matches!(o.status.code(), Some(0) | Some(3)), "{}", stderr(&o));
    let doc = read_json(&dir.path().join("dos_exact.json"));
    assert_eq!(doc["schema_version"], "moire-results/1");
    assert_eq!(doc["config_text"], cfg);
    let rel = doc["results"]["points"][0]["relative_to_free_dirac"].as_f64().unwrap();
    assert!(rel < 0.01, "relative deviation {rel}");
    assert!(dir.path().join("dos_exact_points.csv").exists());
}

const BANDS: &str = "[model]\nvf = 1.0\nw_aa = 0.05\nw_ab = 0.08\neps = 0.1\n[numerics]\nlambda = 1.2\npath_per_leg = 3\n";

#[test]
fn bands_output_is_deterministic_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let o = moire(dir.path(), &["bands", "--threads", "1"], BANDS);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut first = read_json(&dir.path().join("bands.json"));
    let o = moire(dir.path(), &["bands"], BANDS);
    assert_eq!(o.status.code(), Some(0));
    let mut second = read_json(&dir.path().join("bands.json"));
    first.as_object_mut().unwrap().remove("timestamp");
    second.as_object_mut().unwrap().remove("timestamp");
    assert_eq!(first, second);
    assert_eq!(first["results"]["n_points"], 10);
    for f in ["bands_bands.csv", "bands_bands.dat", "bands_plot.gp"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let csv = std::fs::read_to_string(dir.path().join("bands_bands.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn compare_fits_the_slope_of_joined_results() {
    let dir = tempfile::tempdir().unwrap();
    let eps = [0.08, 0.04, 0.02];
    let c = [0.03, 0.001, 0.07];
    let sums: Vec<Value> = eps
        .iter()
        .map(|e| serde_json::json!({ "eps": e, "s0": c[0], "s1": c[0] + e * c[1], "s2": c[0] + e * c[1] + e * e * c[2] }))
        .collect();
    let exact: Vec<Value> = eps.iter().map(|e| serde_json::json!({ "eps": e, "value": c[0] + e * c[1] + e * e * c[2] + 0.2 * e * e * e })).collect();
    let wrap = |results: Value| serde_json::json!({ "schema_version": "moire-results/1", "results": results }).to_string();
    std::fs::write(dir.path().join("dos_exact.json"), wrap(serde_json::json!({ "points": exact }))).unwrap();
    std::fs::write(dir.path().join("dos_expansion.json"), wrap(serde_json::json!({ "partial_sums": sums }))).unwrap();
    let o = moire(dir.path(), &["compare"], "[model]\nvf = 1.0\n");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc = read_json(&dir.path().join("compare.json"));
    let slope = doc["results"]["slope"].as_f64().unwrap();
    assert!((slope - 3.0).abs() < 1e-6, "slope {slope}");
    assert!((doc["results"]["slope_j1"].as_f64().unwrap() - 2.0).abs() < 0.2);
}

#[test]
fn compare_without_inputs_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = moire(dir.path(), &["compare"], "[model]\nvf = 1.0\n");
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn weyl_verify_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[model]\nvf = 1.0\n[weyl]\npairs = 1\ncutoffs = [4]\nmean_zero_symbols = 1\n";
    let o = moire(dir.path(), &["weyl-verify", "--seed", "100"], cfg);
    assert!(matches!(o.status.code(), Some(0) | Some(3)), "{}", stderr(&o));
    let doc = read_json(&dir.path().join("weyl_verify.json"));
    assert_eq!(doc["seed"], 100);
    assert!(doc["results"]["min_slope"].as_f64().unwrap() > 2.7);
    assert!(doc["results"]["trace_identity"][0]["deviation"].as_f64().unwrap() <= 0.25);
}

#[test]
fn warnings_give_exit_code_3() {
    // kgrid 1 has no half-resolution error estimate
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[model]\nhamiltonian = \"free\"\nvf = 1.0\neps_list = [0.1]\n[numerics]\nkgrid = 1\nlambda = 0.8\n";
    let o = moire(dir.path(), &["dos-exact"], cfg);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let doc = read_json(&dir.path().join("dos_exact.json"));
    assert!(!doc["warnings"].as_array().unwrap().is_empty());
}
