//! End-to-end runs of the `forwardperf` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_forwardperf"));
    c.env_remove("FORWARDPERF_SEED");
    c
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TRINOMIAL: &str = r#"version = 1
kind = "tree-verify"
[tree]
preset = "trinomial"
[field]
gamma = { mode = "constant", value = 1.0 }
a = { mode = "calibrate", terminal = 0.0 }
"#;

#[test]
fn calibrated_trinomial_passes_and_writes_report() {
    let dir = TempDir::new().unwrap();
    let sc = write(dir.path(), "tri.toml", TRINOMIAL);
    let out = bin().arg("run").arg(&sc).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}{}", stdout(&out), stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("tri.report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["kind"], "tree-verify");
}

#[test]
fn shifted_root_fails_with_exit_one() {
    let dir = TempDir::new().unwrap();
    let text = TRINOMIAL.replace("terminal = 0.0 }", "terminal = 0.0, root_offset = 0.1 }");
    let sc = write(dir.path(), "bad.toml", &text);
    let report = dir.path().join("out.json");
    let out = bin().arg("run").arg(&sc).arg("--report").arg(&report).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let s = stdout(&out);
    assert!(s.contains("self_generation.dual[0,1]"), "{s}");
    assert!(report.exists());
}

#[test]
fn malformed_tree_file_is_a_config_error_with_location() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "tree.json", "{\n  \"version\": 1,\n  \"horizon\": 1,\n  \"nodes\": [ oops ]\n}\n");
    let text = TRINOMIAL.replace("preset = \"trinomial\"", "file = \"tree.json\"");
    let sc = write(dir.path(), "t.toml", &text);
    let out = bin().arg("run").arg(&sc).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let e = stderr(&out);
    assert!(e.contains("line 4"), "{e}");
}

#[test]
fn unknown_scenario_key_reports_line_and_column() {
    let dir = TempDir::new().unwrap();
    let text = TRINOMIAL.replace("[tree]", "colour = \"blue\"\n[tree]");
    let sc = write(dir.path(), "u.toml", &text);
    let out = bin().arg("run").arg(&sc).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let e = stderr(&out);
    assert!(e.contains("u.toml:3:1"), "{e}");
    assert!(e.contains("colour"), "{e}");
}

#[test]
fn invalid_seed_variable_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let sc = write(dir.path(), "tri.toml", TRINOMIAL);
    let out = bin().arg("run").arg(&sc).env("FORWARDPERF_SEED", "x").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn conjugate_table_rows() {
    let out = bin().args(["conjugate", "--gamma", "1", "--a", "0,2", "--y", "0,1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let rows: Vec<Vec<f64>> =
        text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(text.lines().next(), Some("gamma,a,y,numeric,closed,diff"));
    let row = |a: f64, y: f64| rows.iter().find(|r| r[1] == a && r[2] == y).unwrap().clone();
    // V(y) = y ln y - y - y A for γ = 1; V(0) = sup U = 0.
    let r = row(0.0, 1.0);
    assert!((r[3] + 1.0).abs() < 1e-9 && (r[4] + 1.0).abs() < 1e-12);
    let r = row(2.0, 1.0);
    assert!((r[3] + 3.0).abs() < 1e-9 && (r[4] + 3.0).abs() < 1e-12);
    let r = row(0.0, 0.0);
    assert_eq!(r[4], 0.0);
    assert!(r[3].abs() < 1e-9);
}

#[test]
fn export_paths_writes_csv() {
    let dir = TempDir::new().unwrap();
    let text = r#"version = 1
kind = "export-paths"
seed = 3
[market]
breakpoints = [0.0, 1.0]
theta = [0.5]
delta = [0.2]
phi = [0.3]
rho = [0.1]
horizon = 1.0
[ito]
n_steps = 4
n_paths = 200
[export]
max_paths = 3
nus = [0.0]
"#;
    let sc = write(dir.path(), "e.toml", text);
    let csv_path = dir.path().join("paths.csv");
    let out = bin().arg("export-paths").arg(&sc).arg("--out").arg(&csv_path).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("path,t,S,Z_nu0,inv_gamma,A"));
    assert_eq!(lines.count(), 3 * 5);
}
