use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn nchv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nchv"))
        .args(args)
        .output()
        .expect("run nchv")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn diag(dim: usize, d: &[f64]) -> Value {
    let mut re = vec![0.0; dim * dim];
    for (i, v) in d.iter().enumerate() {
        re[i * dim + i] = *v;
    }
    json!({"dim": dim, "re": re, "im": vec![0.0; dim * dim]})
}

fn write(dir: &Path, name: &str, value: &Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, value.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn gen_family(dir: &Path, count: &str) -> String {
    let out = dir.join("family.json");
    let o = nchv(&[
        "family", "gen", "--n", "2", "--count", count, "--seed", "3", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.to_str().unwrap().to_string()
}

#[test]
fn family_gen_writes_family() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen_family(dir.path(), "4");
    let family: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(family["members"].as_array().unwrap().len(), 4);
}

#[test]
fn simulate_pvm_reports() {
    let dir = tempfile::tempdir().unwrap();
    let family = gen_family(dir.path(), "20");
    let state = write(dir.path(), "state.json", &diag(2, &[0.5, 0.5]));
    let target = write(dir.path(), "target.json", &diag(2, &[1.0, -1.0]));
    let args = [
        "simulate", "pvm", "--family", &family, "--state", &state, "--target", &target, "--eps", "1.5",
        "--trials", "2000", "--seed-app", "1", "--seed-sys", "2",
    ];
    let o = nchv(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout_json(&o);
    assert_eq!(report["trials"], 2000);
    assert!(report["total_variation"].as_f64().unwrap() < 0.05);
    // deterministic given seeds
    assert_eq!(nchv(&args).stdout, o.stdout);

    let mut csv_args = args.to_vec();
    csv_args.extend(["--report", "csv"]);
    let csv = String::from_utf8(nchv(&csv_args).stdout).unwrap();
    assert!(csv.starts_with("outcome,label,count,empirical,born,z"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn simulate_pvm_no_candidate_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let family = gen_family(dir.path(), "2");
    let state = write(dir.path(), "state.json", &diag(2, &[1.0, 0.0]));
    let target = write(dir.path(), "target.json", &diag(2, &[1.0, -1.0]));
    let o = nchv(&[
        "simulate", "pvm", "--family", &family, "--state", &state, "--target", &target, "--eps", "1e-6",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nearest"));
}

#[test]
fn simulate_povm_updates_registry() {
    let dir = tempfile::tempdir().unwrap();
    let registry = dir.path().join("registry.json");
    let registry = registry.to_str().unwrap();
    let state = write(dir.path(), "state.json", &diag(2, &[0.25, 0.75]));
    let target = write(dir.path(), "targets.json", &json!([diag(2, &[0.5, 0.5]), diag(2, &[0.5, 0.5])]));
    let args = [
        "simulate", "povm", "--registry", registry, "--state", &state, "--target", &target, "--eps", "0.1",
        "--trials", "1000",
    ];
    for _ in 0..2 {
        let o = nchv(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let reg: Value = serde_json::from_str(&std::fs::read_to_string(registry).unwrap()).unwrap();
    assert_eq!(reg["entries"].as_array().unwrap().len(), 1);
}

#[test]
fn povm_snap_and_precision_error() {
    let dir = tempfile::tempdir().unwrap();
    let targets = write(
        dir.path(),
        "targets.json",
        &json!([diag(3, &[0.2, 0.3, 0.5]), diag(3, &[0.8, 0.7, 0.5])]),
    );
    let out = dir.path().join("snap.json");
    let o = nchv(&["povm", "snap", "--targets", &targets, "--eps", "0.05", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout_json(&o)["max_deviation"].as_f64().unwrap() < 0.05);
    assert!(out.exists());

    let o = nchv(&[
        "povm", "snap", "--targets", &targets, "--eps", "1e-6", "--out", out.to_str().unwrap(),
        "--denominator-cap", "16",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn kscheck_fixture() {
    let fixture = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/cabello18.json");
    let o = nchv(&["kscheck", "--fixture", fixture, "--enumerate-limit", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["solutions"], 0);
    assert_eq!(v["exhausted"], true);
    assert_eq!(v["colorable"], false);

    let dir = tempfile::tempdir().unwrap();
    let fx = write(dir.path(), "axes.json", &json!({"dim": 3, "vectors": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]}));
    let v = stdout_json(&nchv(&["kscheck", "--fixture", &fx]));
    assert_eq!(v["solutions"], 3);
    assert_eq!(v["full"], true);
}

#[test]
fn validation_errors_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nchv(&["family", "gen", "--n", "3"]).status.code(), Some(4));
    assert_eq!(nchv(&["kscheck", "--fixture", "/nonexistent.json"]).status.code(), Some(4));
    let out = dir.path().join("f.json");
    let o = nchv(&["family", "gen", "--n", "1", "--count", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    let bad_state = write(dir.path(), "state.json", &diag(2, &[0.7, 0.7]));
    let family = gen_family(dir.path(), "2");
    let target = write(dir.path(), "target.json", &diag(2, &[1.0, -1.0]));
    let o = nchv(&[
        "simulate", "pvm", "--family", &family, "--state", &bad_state, "--target", &target, "--eps", "1",
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(nchv(&["--help"]).status.success());
}
