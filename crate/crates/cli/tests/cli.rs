use std::path::Path;
use std::process::Command;

fn lab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lab")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const DOUBLING: &str = r#"{
  "schema_version": 1,
  "experiments": [{
    "name": "ws_doubling",
    "domain": {"kind": "whole_space", "n": 1},
    "field": {"name": "identity", "n": 1, "nu": 1.0, "form": "div"},
    "grid": {"h": 0.05},
    "params": {"kind": "doubling_wholespace", "k": 8.0, "r_list": [0.5, 1.0], "t_list": [1.0], "x_per_t": 3}
  }]
}"#;

const BOX_MC: &str = r#"{
  "schema_version": 1,
  "experiments": [{
    "name": "box_mc",
    "domain": {"kind": "box", "n": 1, "sides": [1.0]},
    "field": {"name": "identity", "n": 1, "nu": 1.0, "form": "div"},
    "grid": {"h": 0.05},
    "refine": false,
    "params": {"kind": "measure", "x": {"x": [0.5], "t": 0.3}, "anchor": {"x": [0.0], "t": 0.2}, "radii": [0.1, 0.2], "mc": {"paths": 2000, "seed": 9}}
  }]
}"#;

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn run_writes_csv_summary_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", DOUBLING);
    let out = dir.path().join("out");
    let o = lab(&["run", &cfg, "--out", out.to_str().unwrap(), "--threads", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let mut rdr = csv::Reader::from_path(out.join("ws_doubling.csv")).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["config_hash", "experiment", "h", "x", "t", "r", "small", "large", "ratio"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    // Three positions by two radii, at h and h/2.
    assert_eq!(rows.len(), 12);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let hash = manifest["config_hash"].as_str().unwrap();
    assert!(rows.iter().all(|r| &r[0] == hash && &r[1] == "ws_doubling"));
    assert_eq!(manifest["experiments"][0]["csv"], "ws_doubling.csv");
    assert_eq!(manifest["experiments"][0]["grids"].as_array().unwrap().len(), 2);

    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("ws_doubling.json")).unwrap()).unwrap();
    let max = rows.iter().filter(|r| &r[2] == "0.025").map(|r| r[8].parse::<f64>().unwrap()).fold(0.0, f64::max);
    assert_eq!(summary["constant"].as_f64().unwrap(), max);
    for key in ["experiment", "params", "constant", "argmax", "grid", "stability"] {
        assert!(summary.get(key).is_some(), "summary lacks {key}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", BOX_MC);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(lab(&["run", &cfg, "--out", a.to_str().unwrap(), "--threads", "1"]).status.code(), Some(0));
    assert_eq!(lab(&["run", &cfg, "--out", b.to_str().unwrap(), "--threads", "3"]).status.code(), Some(0));
    assert_eq!(files(&a), files(&b));
    let cfg = write(dir.path(), "d.json", DOUBLING);
    let (c, d) = (dir.path().join("c"), dir.path().join("d"));
    assert_eq!(lab(&["run", &cfg, "--out", c.to_str().unwrap(), "--threads", "1"]).status.code(), Some(0));
    assert_eq!(lab(&["run", &cfg, "--out", d.to_str().unwrap(), "--threads", "4"]).status.code(), Some(0));
    assert_eq!(files(&c), files(&d));
}

#[test]
fn tau_equal_to_h_squared_exits_with_instability() {
    let dir = tempfile::tempdir().unwrap();
    let text = DOUBLING.replace(r#""grid": {"h": 0.05}"#, r#""grid": {"h": 0.05, "tau": 0.0025}"#);
    let cfg = write(dir.path(), "c.json", &text);
    let out = dir.path().join("out");
    let o = lab(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("ws_doubling.json")).unwrap()).unwrap();
    assert!(summary["error"].as_str().unwrap().contains("positivity violated"), "{}", summary["error"]);
}

#[test]
fn schema_violations_exit_2_before_computing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for bad in [
        DOUBLING.replace(r#""x_per_t": 3"#, r#""x_per_t": 3, "seed": 1"#),
        DOUBLING.replace(r#""schema_version": 1"#, r#""schema_version": 2"#),
        DOUBLING.replace(r#""n": 1}"#, r#""n": 2}"#),
        "not json".into(),
    ] {
        let cfg = write(dir.path(), "c.json", &bad);
        assert_eq!(lab(&["run", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(2), "{bad}");
    }
    assert!(!out.exists());
    assert_eq!(lab(&["run", "/nonexistent/c.json"]).status.code(), Some(2));
}

#[test]
fn unknown_suite_exits_2() {
    assert_eq!(lab(&["suite", "nightly"]).status.code(), Some(2));
}

#[test]
fn failed_check_exits_1_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    // K listed in descending order cannot pass the increasing-in-K check.
    let text = r#"{
      "schema_version": 1,
      "experiments": [{
        "name": "decay",
        "domain": {"kind": "whole_space", "n": 1},
        "field": {"name": "identity", "n": 1, "nu": 1.0, "form": "div"},
        "grid": {"h": 0.2},
        "refine": false,
        "params": {"kind": "boundary_decay", "anchor": {"x": [0.0], "t": 0.0}, "ks": [16.0, 8.0], "rho0": 1.0, "radii": [2.0, 4.0]}
      }]
    }"#;
    let cfg = write(dir.path(), "c.json", text);
    let out = dir.path().join("out");
    let o = lab(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("decay.csv").exists() && out.join("manifest.json").exists());
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("decay.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], false);
}

#[test]
fn report_emits_plot_data_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", DOUBLING);
    let out = dir.path().join("out");
    assert_eq!(lab(&["run", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let o = lab(&["report", out.join("manifest.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("ws_doubling"));
    let plot = std::fs::read_to_string(out.join("ws_doubling.plot.dat")).unwrap();
    let series: Vec<Vec<f64>> = plot
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(series.len(), 6);
    assert!(series.iter().all(|p| p.len() == 2 && p[1] >= 1.0));
    let grid = std::fs::read_to_string(out.join("ws_doubling.grid.dat")).unwrap();
    assert_eq!(grid.lines().filter(|l| !l.starts_with('#')).count(), 3);
    assert!(out.join("summary.txt").exists());

    std::fs::remove_file(out.join("ws_doubling.csv")).unwrap();
    assert_eq!(lab(&["report", out.join("manifest.json").to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn smoke_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["suite", "smoke", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}
