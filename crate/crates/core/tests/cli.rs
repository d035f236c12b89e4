use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use sha2::{Digest, Sha256};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn ovb(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_ovb-iv")).args(args).output().unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Writes a random LATE sample and returns the CSV path.
fn sample(dir: &Path, n: usize) -> PathBuf {
    let out = dir.join("gen");
    let r = ovb(&["generate", "--preset", "random-iv", "--estimand", "late", "--n", &n.to_string(), "--seed", "4", "--out", &s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    out.join("data.csv")
}

#[test]
fn estimate_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample(dir.path(), 1500);
    let mut outputs = Vec::new();
    for (i, workers) in ["1", "2"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let r = ovb(&[
            "estimate", "--data", &s(&data), "--estimand", "late", "--learner", "saturated", "--seed", "11", "--workers", workers, "--out",
            &s(&out),
        ]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        assert!(r.stdout.contains("lambda_s"));
        outputs.push(fs::read(out.join("estimates.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn manifest_records_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample(dir.path(), 800);
    let out = dir.path().join("est");
    let r = ovb(&["estimate", "--data", &s(&data), "--learner", "saturated", "--out", &s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let m = json(&out.join("manifest.json"));
    let data_hash = hex(&fs::read(&data).unwrap());
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap(), data_hash);
    let est_hash = hex(&fs::read(out.join("estimates.json")).unwrap());
    let outputs = m["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["path"] == "estimates.json" && o["sha256"] == est_hash.as_str()));
    assert_eq!(m["seed"], 0);
    assert!(m["version"].is_string());
}

#[test]
fn missing_instrument_column_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("noz.csv");
    fs::write(&path, "y,d,x1\n1.0,1,0\n2.0,0,1\n0.5,1,1\n").unwrap();
    let r = ovb(&["estimate", "--data", &s(&path), "--out", &s(&dir.path().join("o"))]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("`z`"), "{}", r.stderr);
}

#[test]
fn single_fold_is_rejected_before_reading_data() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "not,a,dataset\n").unwrap();
    let r = ovb(&["estimate", "--data", &s(&path), "--k-folds", "1", "--out", &s(&dir.path().join("o"))]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("k_folds"), "{}", r.stderr);
    assert!(!dir.path().join("o").exists());
}

#[test]
fn theorem_check_subcommand() {
    let r = ovb(&["check-theorem1", "--lambda-lo", "196.40", "--lambda-hi", "1849.64", "--gamma-lo", "0.61", "--gamma-hi", "0.62"]);
    assert_eq!(r.code, 0);
    assert!(r.stdout.contains("316.77") && r.stdout.contains("3032.19"), "{}", r.stdout);
    let r = ovb(&["check-theorem1", "--lambda-lo", "1", "--lambda-hi", "2", "--gamma-lo", "-0.1", "--gamma-hi", "0.3", "--json"]);
    assert_eq!(r.code, 3);
    let v: Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["first_stage_failure"], true);
}

#[test]
fn bounds_from_saved_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample(dir.path(), 1500);
    let est = dir.path().join("est");
    assert_eq!(ovb(&["estimate", "--data", &s(&data), "--learner", "saturated", "--out", &s(&est)]).code, 0);
    let est_file = s(&est.join("estimates.json"));
    let e = json(&est.join("estimates.json"));

    // Zero sensitivity: bounds collapse onto the point estimates.
    let zero = dir.path().join("zero");
    let r = ovb(&["bounds", "--estimates", &est_file, "--out", &s(&zero)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let b = json(&zero.join("bounds.json"));
    assert_eq!(b["bounds"]["lambda_lo"], e["estimates"]["lambda_s"]);
    assert_eq!(b["bounds"]["lambda_hi"], e["estimates"]["lambda_s"]);
    assert_eq!(b["bounds"]["gamma_lo"], e["estimates"]["gamma_s"]);
    assert!(b["case_label"].is_string());

    // Strong confounding of the treatment: the gamma bounds cross zero.
    let fail = dir.path().join("fail");
    let r = ovb(&["bounds", "--estimates", &est_file, "--c-alpha", "5", "--c-d", "1", "--out", &s(&fail)]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(r.stdout.contains("FIRST-STAGE FAILURE"));
    let b = json(&fail.join("bounds.json"));
    assert_eq!(b["first_stage_failure"], true);
    assert!(fail.join("manifest.json").exists());

    // Estimand mismatch with the saved file.
    let r = ovb(&["bounds", "--estimates", &est_file, "--estimand", "latt", "--out", &s(&dir.path().join("x"))]);
    assert_eq!(r.code, 2);
}

#[test]
fn ci_prints_conventional_intervals_beside_adjusted_ones() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample(dir.path(), 1500);
    let out = dir.path().join("ci");
    let r = ovb(&[
        "ci", "--data", &s(&data), "--learner", "saturated", "--reps", "2", "--c-alpha", "0.1", "--c-y", "0.1", "--c-d", "0.05", "--out", &s(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    for needle in ["C.I. (95%)", "[Low_0.025, Up_0.975]", "conventional (95%)", "OVB-adj. C.I. (95%)", "z_l*", "Delta*", "Min.Obj."] {
        assert!(r.stdout.contains(needle), "missing {needle}:\n{}", r.stdout);
    }
    let csv = fs::read_to_string(out.join("phi_curve.csv")).unwrap();
    assert!(csv.starts_with("t,phi_lo,phi_hi,se_lo,se_hi,ci_lo,ci_hi"));
    assert_eq!(csv.lines().count(), 202);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample(dir.path(), 1500);
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[run]\nestimand = \"late\"\ndata = \"gen/data.csv\"\nk_folds = 3\nreps = 1\nout = \"from-config\"\n\n[learner]\nkind = \"saturated_cells\"\n\n[grids]\nzeta_max = 0.5\nzeta_points = 11\n",
    )
    .unwrap();
    assert!(data.exists());
    let out = dir.path().join("flag-out");
    let r = ovb(&["contour", "--config", &s(&cfg), "--out", &s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(!dir.path().join("from-config").exists());
    let rows = fs::read_to_string(out.join("contour_lambda.csv")).unwrap();
    assert_eq!(rows.lines().count(), 12);
    assert!(rows.starts_with("zeta,lower,upper,se_lower,se_upper,ci_lower,ci_upper"));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["config"]["run"]["k_folds"], 3);

    fs::write(dir.path().join("typo.toml"), "[run]\nk_fold = 3\n").unwrap();
    let r = ovb(&["estimate", "--config", &s(&dir.path().join("typo.toml"))]);
    assert_eq!(r.code, 2);
}

#[test]
fn benchmark_reports_each_group() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample(dir.path(), 2000);
    let groups = dir.path().join("groups.txt");
    fs::write(&groups, "first: x1\nsecond: x2\n").unwrap();
    let out = dir.path().join("bm");
    let r = ovb(&["benchmark", "--data", &s(&data), "--learner", "saturated", "--reps", "1", "--groups", &s(&groups), "--out", &s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let b = json(&out.join("benchmark.json"));
    assert_eq!(b["groups"].as_array().unwrap().len(), 2);
    assert!(b["argmax_c_alpha"].is_string());
    assert!(r.stdout.contains("maximum over groups"));
}

#[test]
fn simulate_writes_coverage_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let r = ovb(&[
        "simulate", "--preset", "random-iv", "--estimand", "late", "--n", "500", "--reps", "12", "--learner", "saturated", "--out", &s(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let c = json(&out.join("coverage.json"));
    assert_eq!(c["reps"], 12);
    assert_eq!(c["lambda_in_bound_ci"]["total"], 12);
    let rows = fs::read_to_string(out.join("replications.csv")).unwrap();
    assert_eq!(rows.lines().count(), 13);
}
