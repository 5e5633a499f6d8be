use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nlpf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlpf")).args(args).output().expect("binary runs")
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn short_config(dir: &Path, name: &str, horizon: f64) -> PathBuf {
    let text = fs::read_to_string(config(name)).unwrap();
    let text = text.replace("solver.horizon = 1.0", &format!("solver.horizon = {horizon}"));
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn smoke_run_writes_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("eq");
    let o = nlpf(&["run", "--config", s(&config("equilibrium.toml")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("snap_000000.bin").exists());
    assert!(out.join("snap_000020.bin").exists());
    assert!(out.join("records.csv").exists());
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("rho = 199000000.0"));
    assert!(!manifest.contains("dir ="));
}

#[test]
fn phase_gradient_violation_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let o = nlpf(&["run", "--config", s(&config("bad_phase_gradient.toml")), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("d_chi c_V"), "{}", stderr(&o));
}

#[test]
fn zero_step_is_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("equilibrium.toml")).unwrap().replace("solver.dt = 0.01", "solver.dt = 0.0");
    let path = tmp.path().join("c.toml");
    fs::write(&path, text).unwrap();
    let o = nlpf(&["run", "--config", s(&path), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn unknown_key_is_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("equilibrium.toml")).unwrap() + "solver.dtt = 1.0\n";
    let path = tmp.path().join("c.toml");
    fs::write(&path, text).unwrap();
    let o = nlpf(&["run", "--config", s(&path), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("dtt"), "{}", stderr(&o));
}

#[test]
fn conserved_run_verifies() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path(), "coupled.toml", 0.05);
    let out = tmp.path().join("run");
    assert_eq!(code(&nlpf(&["run", "--config", s(&cfg), "--out", s(&out)])), 0);
    let o = nlpf(&["verify", s(&out), "--checks", "energy,records"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = nlpf(&["verify", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(out.join("verify.csv")).unwrap();
    assert!(report.starts_with("check,quantity,value,threshold,passed"));
    assert!(report.contains("generic,max_residual"));
    assert!(!report.contains(",false"));
}

#[test]
fn equilibrium_entropy_is_exactly_flat() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("eq");
    assert_eq!(code(&nlpf(&["run", "--config", s(&config("equilibrium.toml")), "--out", s(&out)])), 0);
    let o = nlpf(&["verify", s(&out), "--checks", "entropy"]);
    assert_eq!(code(&o), 0);
    let report = fs::read_to_string(out.join("verify.csv")).unwrap();
    for line in report.lines().skip(1) {
        let value: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(value, 0.0, "{line}");
    }
}

#[test]
fn corrupted_and_missing_snapshots_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("eq");
    assert_eq!(code(&nlpf(&["run", "--config", s(&config("equilibrium.toml")), "--out", s(&out)])), 0);
    let victim = out.join("snap_000007.bin");
    let mut bytes = fs::read(&victim).unwrap();
    bytes[0] = b'X';
    fs::write(&victim, &bytes).unwrap();
    let o = nlpf(&["verify", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("snap_000007.bin"), "{}", stderr(&o));

    bytes[0] = b'N';
    bytes.truncate(bytes.len() - 8);
    fs::write(&victim, &bytes).unwrap();
    assert_eq!(code(&nlpf(&["verify", s(&out)])), 2);

    fs::remove_file(&victim).unwrap();
    let o = nlpf(&["verify", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("snap_000007.bin"), "{}", stderr(&o));
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path(), "coupled.toml", 0.02);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&nlpf(&["--threads", "1", "run", "--config", s(&cfg), "--out", s(&a)])), 0);
    let manifest = a.join("manifest.toml");
    assert_eq!(code(&nlpf(&["--threads", "1", "run", "--config", s(&manifest), "--out", s(&b)])), 0);
    let names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(names.len() > 3);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path(), "coupled.toml", 0.02);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&nlpf(&["--threads", "1", "run", "--config", s(&cfg), "--out", s(&a)])), 0);
    assert_eq!(code(&nlpf(&["--threads", "4", "run", "--config", s(&cfg), "--out", s(&b)])), 0);
    assert_eq!(fs::read(a.join("records.csv")).unwrap(), fs::read(b.join("records.csv")).unwrap());
}

#[test]
fn calibrate_prints_verified_values() {
    let o = nlpf(&["calibrate", "--c-star", "0"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("rho* = 1\n"));
    let o = nlpf(&["calibrate", "--c-star", "1", "--dim", "1"]);
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    let rho: f64 = text.lines().next().unwrap().trim_start_matches("rho* = ").parse().unwrap();
    assert!((1e6..=1e9).contains(&rho));
    assert!(text.contains("at rho*/1.01"));
    assert_eq!(code(&nlpf(&["calibrate", "--c-star", "-1"])), 2);
}

#[test]
fn refinement_study_is_first_order() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r.csv");
    let o = nlpf(&["study", "dt-refinement", "--config", s(&config("single_cell.toml")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let orders: Vec<f64> = text.lines().skip(2).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(orders.len(), 2);
    assert!(orders.iter().all(|p| (0.8..=1.2).contains(p)), "{orders:?}");
}

#[test]
fn local_limit_and_inclusion_studies_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("l.csv");
    let o = nlpf(&["study", "local-limit", "--config", s(&config("local_limit.toml")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = nlpf(&["study", "inclusion-dependence", "--config", s(&config("local_limit.toml")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn dependence_study_needs_uniqueness_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path(), "coupled.toml", 0.02);
    let o = nlpf(&["study", "dependence", "--config", s(&cfg), "--out", s(&tmp.path().join("d.csv"))]);
    assert_eq!(code(&o), 2);
    let cfg = short_config(tmp.path(), "uniqueness.toml", 0.05);
    let o = nlpf(&["study", "dependence", "--config", s(&cfg), "--out", s(&tmp.path().join("d.csv"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}
