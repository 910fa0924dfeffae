use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn canomap(args: &[&str], out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_canomap"));
    cmd.args(args);
    if let Some(dir) = out {
        cmd.env("CANOMAP_OUT", dir);
    } else {
        cmd.env_remove("CANOMAP_OUT");
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn rotation_run_reports_canonical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "rot.json", r#"{"scenario":"rotation","step":1e-2}"#);
    let out = tmp.path().join("out");
    let o = canomap(&["run", "--config", cfg.to_str().unwrap()], Some(&out));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("VERDICT=canonical max_residual="));
    let inv = json(&out.join("invariants.json"));
    assert_eq!(inv["verdict"], "canonical");
    assert_eq!(inv["map_variant"], "cross");
    assert!(inv["symplectic_defect"]["max"].as_f64().unwrap() < 1e-9);
}

#[test]
fn ballistic_radius_stays_constant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.json", r#"{"scenario":"ballistic","t1":10.0,"points":8}"#);
    let out = tmp.path().join("out");
    let o = canomap(&["run", "--config", cfg.to_str().unwrap()], Some(&out));
    assert_eq!(o.status.code(), Some(0));
    let mut rdr = csv::Reader::from_path(out.join("trajectory.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let r_col = headers.iter().position(|h| h == "x_3").unwrap();
    let mut worst = 0.0f64;
    for rec in rdr.records() {
        let r: f64 = rec.unwrap()[r_col].parse().unwrap();
        worst = worst.max((r - 1.0).abs());
    }
    assert!(worst < 1e-9, "radius deviation {worst:e}");
}

#[test]
fn invalid_step_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", r#"{"scenario":"linear","step":0.0}"#);
    let o = canomap(&["run", "--config", cfg.to_str().unwrap()], Some(&tmp.path().join("out")));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step must be positive"));
}

#[test]
fn unknown_config_field_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", r#"{"scenario":"linear","stepsize":0.1}"#);
    let o = canomap(&["run", "--config", cfg.to_str().unwrap()], Some(&tmp.path().join("out")));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn violated_verdict_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "v.json",
        r#"{"scenario":"custom","matrix":[[0,1],[-1,0]],"lam0":[1,-1],"coupling":0.1,"step":1e-2}"#,
    );
    let o = canomap(&["run", "--config", cfg.to_str().unwrap()], Some(&tmp.path().join("out")));
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).starts_with("VERDICT=violated"));
}

#[test]
fn blow_up_is_a_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "x.json", r#"{"scenario":"custom","matrix":[[40]],"t1":1.0,"step":1e-2}"#);
    let out = tmp.path().join("out");
    let o = canomap(&["run", "--config", cfg.to_str().unwrap()], Some(&out));
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("truncated"));
    assert!(out.join("trajectory.csv").exists());
}

#[test]
fn empty_sweep_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "s.json", r#"{"scenario":"linear"}"#);
    let o = canomap(
        &["sweep", "--config", cfg.to_str().unwrap(), "--param", "seed", "--values", ""],
        Some(&tmp.path().join("out")),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_sweep_gives_identical_verdicts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "s.json", r#"{"scenario":"linear","n":1,"step":1e-2,"points":8}"#);
    let out = tmp.path().join("out");
    let o = canomap(
        &["sweep", "--config", cfg.to_str().unwrap(), "--param", "seed", "--values", "1,2,3"],
        Some(&out),
    );
    assert_eq!(o.status.code(), Some(0));
    let mut rdr = csv::Reader::from_path(out.join("index.csv")).unwrap();
    let verdicts: Vec<String> = rdr.records().map(|r| r.unwrap()[2].to_string()).collect();
    assert_eq!(verdicts, ["canonical"; 3]);
    for k in 0..3 {
        assert!(out.join(format!("seed_{k}")).join("invariants.json").exists());
    }
}

#[test]
fn step_sweep_reduces_energy_drift() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "s.json",
        r#"{"scenario":"custom","matrix":[[0,1],[-2,-0.5]],"controlling":"transition","points":4}"#,
    );
    let out = tmp.path().join("out");
    let o = canomap(
        &["sweep", "--config", cfg.to_str().unwrap(), "--param", "step", "--values", "0.2,0.1,0.05"],
        Some(&out),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let mut rdr = csv::Reader::from_path(out.join("index.csv")).unwrap();
    let drift: Vec<f64> = rdr.records().map(|r| r.unwrap()[4].parse().unwrap()).collect();
    assert!(drift[0] > drift[1] && drift[1] > drift[2], "{drift:?}");
}

#[test]
fn output_dir_from_config_and_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let configured = tmp.path().join("configured");
    let body = format!(r#"{{"scenario":"rotation","step":0.1,"output_dir":{}}}"#, serde_json::to_string(&configured).unwrap());
    let cfg = write_config(tmp.path(), "r.json", &body);
    assert_eq!(canomap(&["run", "--config", cfg.to_str().unwrap()], None).status.code(), Some(0));
    assert!(configured.join("invariants.json").exists());

    let env_dir = tmp.path().join("from_env");
    assert_eq!(canomap(&["run", "--config", cfg.to_str().unwrap()], Some(&env_dir)).status.code(), Some(0));
    assert!(env_dir.join("canonicity.csv").exists());
}

#[test]
fn verify_reports_derivative_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.json", r#"{"scenario":"ballistic","step":1e-2,"points":8}"#);
    let out = tmp.path().join("out");
    let o = canomap(&["verify", "--config", cfg.to_str().unwrap()], Some(&out));
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "DERIVATIVES=pass");
    let doc = json(&out.join("derivatives.json"));
    assert_eq!(doc["system"]["blocks"]["jac"]["exceeds"], false);
}

#[test]
fn plot_script_is_optional() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "p.json", r#"{"scenario":"rotation","step":0.1,"plot":true}"#);
    let out = tmp.path().join("out");
    assert_eq!(canomap(&["run", "--config", cfg.to_str().unwrap()], Some(&out)).status.code(), Some(0));
    assert!(fs::read_to_string(out.join("plot.gp")).unwrap().contains("canonicity.csv"));
}
