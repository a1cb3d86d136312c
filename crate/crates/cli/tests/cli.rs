use std::path::Path;
use std::process::{Command, Output};

fn bubbles(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bubbles"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const TINY: &str = r#"
[lattice]
width = 2
height = 2

[shape]
kind = "square"
L = 1

[hamiltonian]
J = 1.0
h_perp = 1.0
h_par = -0.1

[tdvp]
dt = 0.1
chi = 16
krylov_dim = 25
krylov_tol = 1e-10
svd_cutoff = 1e-10

[run]
t_max = 1.0
snapshot_times = [0.0, 0.5]
backend = "exact"

[scan]
sizes = [1, 2]
h_par_values = [-0.2]
"#;

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn presets_are_listed_and_written() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&bubbles(&["presets", "--write", "p"], dir.path()));
    for name in ["critical-size", "desk-patch", "convergence"] {
        assert!(text.contains(name));
        let file = std::fs::read_to_string(dir.path().join("p").join(format!("{name}.toml"))).unwrap();
        assert!(file.starts_with("# ") && file.contains("# usage: bubbles "));
    }
}

#[test]
fn run_writes_series_snapshots_and_result() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    ok(&bubbles(&["run", "--config", "tiny.toml", "--out", "out"], dir.path()));
    let out = dir.path().join("out");
    let series = std::fs::read_to_string(out.join("series.csv")).unwrap();
    let mut lines = series.lines();
    assert_eq!(lines.next(), Some("t,avg_x,energy,norm,max_entropy"));
    assert_eq!(lines.count(), 11);
    let snap = std::fs::read_to_string(out.join("snapshot_t0.500.csv")).unwrap();
    assert_eq!(snap.lines().count(), 2);
    assert!(out.join("snapshot_t0.000.csv").exists());
    let result = json(&out.join("result.json"));
    assert!(result["fate"].is_string());
}

#[test]
fn default_output_directory_is_keyed_by_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    ok(&bubbles(&["run", "--config", "tiny.toml"], dir.path()));
    let runs: Vec<_> = std::fs::read_dir(dir.path().join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let name = runs[0].as_ref().unwrap().file_name();
    assert_eq!(name.to_str().unwrap().len(), 12);
}

#[test]
fn size_scan_writes_one_table_per_bias() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let args = ["scan-size", "--config", "tiny.toml", "--out", "out", "--h-par", "-0.3,-0.1", "--jobs", "2"];
    ok(&bubbles(&args, dir.path()));
    let tables = json(&dir.path().join("out/scan-size.json"));
    let tables = tables.as_array().unwrap();
    assert_eq!(tables.len(), 2);
    for t in tables {
        assert_eq!(t["rows"].as_array().unwrap().len(), 2);
    }
    assert!(dir.path().join("out/scan-size").is_dir());
}

#[test]
fn shapes_lists_the_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&bubbles(&["shapes", "--width", "8", "--height", "8"], dir.path()));
    let records: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(!records.as_array().unwrap().is_empty());
    ok(&bubbles(&["shapes", "--width", "8", "--height", "8", "--out", "s"], dir.path()));
    assert_eq!(json(&dir.path().join("s/shapes.json")), records);
}

#[test]
fn bad_configs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), TINY.replace("width = 2", "width = 3")).unwrap();
    let out = bubbles(&["run", "--config", "bad.toml"], dir.path());
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
    let out = bubbles(&["run", "--preset", "no-such-preset"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown preset"));
    assert!(!bubbles(&["run"], dir.path()).status.success());
}
