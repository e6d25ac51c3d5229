//! End-to-end runs of the `mfgaccel` binary on small grids.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mfgaccel::config::RunConfig;
use serde_json::Value;
use tempfile::TempDir;

const GRID: &str = r#""grid": {"r_x": 3, "r_v": 3, "n_x": 41, "n_v": 41, "n_t": 41, "n_a": 15, "a_max": 3, "n_b": 61},
    "measure": {"particles": 100}"#;

fn config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let sep = if extra.is_empty() { "" } else { "," };
    let path = dir.join("config.json");
    fs::write(&path, format!("{{{GRID}{sep}{extra}}}")).unwrap();
    path
}

fn run(dir: &TempDir, extra: &str, args: &[&str]) -> Output {
    let cfg = config(dir.path(), extra);
    Command::new(env!("CARGO_BIN_EXE_mfgaccel"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn json(dir: &TempDir, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.path().join("out").join(name)).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn solve_eps_writes_artifacts_and_round_trips_the_config() {
    let dir = TempDir::new().unwrap();
    let o = run(&dir, "", &["solve-eps", "--eps", "0.1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let value = fs::read_to_string(dir.path().join("out/value.csv")).unwrap();
    assert!(value.starts_with("t,x,v,u\n"));
    let flow = fs::read_to_string(dir.path().join("out/flow.csv")).unwrap();
    assert!(flow.starts_with("t,x,v,w\n"));
    let meta = json(&dir, "meta.json");
    assert_eq!(meta["converged"], true);
    assert_eq!(meta["kind"], "eps_system");
    let loaded = RunConfig::load(&dir.path().join("config.json")).unwrap();
    let echoed = RunConfig::from_json(&meta["config"].to_string()).unwrap();
    assert_eq!(loaded, echoed);
}

#[test]
fn zero_penalty_is_refused_with_a_pointer_to_the_limit_solver() {
    let dir = TempDir::new().unwrap();
    let o = run(&dir, "", &["solve-eps", "--eps", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("solve-limit"));
}

#[test]
fn unconverged_picard_exits_3_and_keeps_the_last_iterate() {
    let dir = TempDir::new().unwrap();
    let o = run(&dir, r#""solver": {"max_iter": 1}"#, &["solve-eps", "--eps", "0.1"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let meta = json(&dir, "meta.json");
    assert_eq!(meta["converged"], false);
    assert_eq!(meta["iterations"], 1);
    assert!(dir.path().join("out/value.csv").exists());
}

#[test]
fn limit_kinds() {
    let dir = TempDir::new().unwrap();
    let o = run(&dir, "", &["solve-limit", "--kind", "sideways"]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(
        &dir,
        r#""model": {"coupling": "none", "kappa_c": 0}"#,
        &["solve-limit", "--kind", "classical"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let meta = json(&dir, "meta.json");
    assert_eq!(meta["iterations"], 1);
    let value = fs::read_to_string(dir.path().join("out/value.csv")).unwrap();
    assert!(value.starts_with("t,x,u\n"));

    let o = run(&dir, r#""model": {"coupling": "joint"}"#, &["solve-limit", "--kind", "classical"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run(&dir, r#""model": {"coupling": "joint"}"#, &["solve-limit", "--kind", "control"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(&dir, "meta.json")["kind"], "mfg_of_control");
}

#[test]
fn bad_config_exits_2() {
    let dir = TempDir::new().unwrap();
    let o = run(&dir, r#""model": {"no_such_field": 1}"#, &["solve-eps", "--eps", "0.1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_field"));
}

#[test]
fn sweep_flags_failed_rungs_and_finishes() {
    let dir = TempDir::new().unwrap();
    let o = run(
        &dir,
        r#""sweep": {"refinement": false, "overrides": [{"eps": 0.01, "max_iter": 1}]}"#,
        &["sweep"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[0], mfgaccel::analysis::REPORT_HEADER);
    let last: Vec<&str> = lines[6].split(',').collect();
    assert_eq!(last[0].parse::<f64>().unwrap(), 0.01);
    assert_eq!(*last.last().unwrap(), "false");
    assert!(stderr(&o).contains("flagged"));
    assert_eq!(String::from_utf8_lossy(&o.stdout), report);
    let rates = json(&dir, "rates.json");
    assert!(rates["rates"]["osc_v"]["slope"].is_number(), "{rates}");
    assert_eq!(rates["rates"]["osc_v"]["points"], 5);
    assert_eq!(rates["flagged"][0]["eps"], 0.01);
    assert!(dir.path().join("out/probes.csv").exists());
}

#[test]
fn traj_methods_agree() {
    let dir = TempDir::new().unwrap();
    let o = run(&dir, "", &["traj", "--eps", "0.1", "--x", "0.5", "--v", "-0.3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = json(&dir, "traj.json");
    assert!(t["cost_gap"].as_f64().unwrap() < 1e-5, "{t}");
    let bvp = fs::read_to_string(dir.path().join("out/bvp.csv")).unwrap();
    assert!(bvp.starts_with("t,gamma,dgamma,ddgamma\n"));
    assert_eq!(bvp.lines().count(), 402);
}

#[test]
fn particle_at_rest_costs_nothing() {
    let dir = TempDir::new().unwrap();
    let o = run(
        &dir,
        r#""model": {"coupling": "none", "kappa_c": 0}"#,
        &["traj", "--eps", "0.05", "--x", "0", "--v", "0", "--m", "101"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = json(&dir, "traj.json");
    assert!(t["direct"]["cost"].as_f64().unwrap().abs() < 1e-12, "{t}");
    assert!(t["bvp"]["cost"].as_f64().unwrap().abs() < 1e-12, "{t}");
}

#[test]
fn traj_outside_the_box_exits_2() {
    let dir = TempDir::new().unwrap();
    let o = run(&dir, "", &["traj", "--eps", "0.1", "--x", "10", "--v", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("outside"));
}

#[test]
fn audit_passes_on_the_default_model() {
    let dir = TempDir::new().unwrap();
    let o = run(&dir, "", &["audit", "--samples", "11"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(&dir, "audit.json")["passed"], true);
}
