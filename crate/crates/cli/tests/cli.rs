use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hvac-redteam")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SHORT: &str = r#"{"id": "short", "controller": "standard-mpc", "duration": 20, "seed": 3}"#;

#[test]
fn track_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SHORT);
    let out = dir.path().join("out");
    let o = cli(&["track", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["run.csv", "metrics.json", "plots/power.svg", "plots/sensors.svg", "plots/apar.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(out.join("run.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    let r = cli(&["report", "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert!(String::from_utf8_lossy(&r.stdout).contains("scenario        short"));
}

#[test]
fn defend_writes_both_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SHORT);
    let out = dir.path().join("out");
    let o = cli(&["defend", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("standard/run.csv").exists());
    let metrics = std::fs::read_to_string(out.join("metrics.json")).unwrap();
    assert!(metrics.contains("\"baseline_id\": \"short-standard\""));
    assert!(metrics.contains("\"attack\": \"stealthy\""));
}

#[test]
fn sweep_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SHORT);
    let out = dir.path().join("out");
    let o = cli(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--grid", "0.1,0.3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.starts_with("tolerance_c,rmse_standard_w,rmse_resilient_w\n0.1,"));
}

#[test]
fn errors_exit_nonzero_with_name() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let shuffled = write(dir.path(), "shuffled.csv", "time_s,t_out_c,solar_j_per_m2\n0,30,0\n60,31,0\n30,32,0\n");
    let headless = write(dir.path(), "headless.csv", "0,30,0\n60,31,0\n");
    let from_file = |p: &str| format!(r#"{{"controller": "pi", "env": {{"kind": "file", "path": "{p}", "solar_gain_m2": 1}}}}"#);
    let (shuffled, headless) = (from_file(&shuffled), from_file(&headless));
    let cases = [
        (r#"{"controller": "pi", "params": {"mdot_lb": 5, "mdot_ub": 1}}"#, "ValidationError"),
        (r#"{"controller": "pi", "horizn": 3}"#, "ParseError"),
        ("{\"controller\": ", "ParseError"),
        (r#"{"controller": "pi", "preset": "nope"}"#, "ValidationError"),
        (r#"{"controller": "pi", "env": {"kind": "file", "path": "/nonexistent.csv", "solar_gain_m2": 1}}"#, "IoError"),
        (shuffled.as_str(), "NonMonotonicTime"),
        (headless.as_str(), "SchemaError"),
    ];
    for (i, (text, name)) in cases.iter().enumerate() {
        let cfg = write(dir.path(), &format!("bad{i}.json"), text);
        let o = cli(&["baseline", "--config", &cfg, "--out", out]);
        assert!(!o.status.success(), "case {i}");
        assert!(stderr(&o).starts_with(&format!("{name}:")), "case {i}: {}", stderr(&o));
    }
    let o = cli(&["track", "--config", "/nonexistent.json"]);
    assert!(stderr(&o).starts_with("IoError:"), "{}", stderr(&o));
    let o = cli(&["report", "--out", "/nonexistent"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("IoError:"));
}

#[test]
fn report_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SHORT);
    let out = dir.path().join("out");
    assert!(cli(&["attack", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let csv = std::fs::read_to_string(out.join("run.csv")).unwrap();
    let mut lines: Vec<String> = csv.lines().map(String::from).collect();
    let mut cols: Vec<String> = lines[5].split(',').map(String::from).collect();
    cols[5] = "0".into();
    lines[5] = cols.join(",");
    std::fs::write(out.join("run.csv"), lines.join("\n") + "\n").unwrap();
    let o = cli(&["report", "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("ReportMismatch:"), "{}", stderr(&o));
}
