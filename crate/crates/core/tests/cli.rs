use std::fs;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ep-critical")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn verdicts_json(o: &Output) -> Vec<String> {
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    v.as_array().unwrap().iter().map(|r| r["verdict"].as_str().unwrap().to_string()).collect()
}

/// Verdict column of a sweep CSV, in row order.
fn verdicts_csv(o: &Output) -> Vec<String> {
    let text = stdout(o);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "verdict").unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().to_string()).collect()
}

#[test]
fn constant_state_profile_is_global_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.csv");
    let mut text = String::from("r,rho0,u0\n");
    for i in 0..=50 {
        text.push_str(&format!("{},1,0\n", 0.05 + 0.1 * i as f64));
    }
    fs::write(&path, text).unwrap();
    let o = run(&["--params", "k=1,c=1,N=4", "classify", "--profile", path.to_str().unwrap(), "--radii-grid", "10"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = verdicts_json(&o);
    assert_eq!(v.len(), 10);
    assert!(v.iter().all(|x| x == "Global"));
}

#[test]
fn vacuum_point_breaks_down() {
    let o = run(&["--params", "k=1,c=1,N=4", "classify", "--point", "1,0.1,0.1,0.15,0"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(verdicts_json(&o), ["Breakdown"]);
}

#[test]
fn window_midpoint_is_global() {
    let o = run(&["--params", "k=1,c=1,N=4", "classify", "--point", "1,0.1,0.1,0.15,1"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(verdicts_json(&o), ["Global"]);
}

#[test]
fn a_line_crosses_the_window_once() {
    let o = run(&["--params", "k=1,c=1,N=4", "sweep", "--base", "1,0.1,0.1", "--a-line", "0.15", "--rho0", "0.01:3:30"]);
    assert_eq!(o.status.code(), Some(0));
    let v = verdicts_csv(&o);
    assert_eq!(v.len(), 30);
    let mut runs: Vec<&str> = Vec::new();
    for x in &v {
        if runs.last() != Some(&x.as_str()) {
            runs.push(x);
        }
    }
    assert_eq!(runs, ["Breakdown", "Global", "Breakdown"]);
}

#[test]
fn single_cell_grids_work_with_and_without_background() {
    let o = run(&["--params", "k=1,c=1,N=4", "sweep", "--base", "1,0.1,0.1", "--u0r", "0.15:0.15:1", "--rho0", "1:1:1"]);
    assert_eq!(verdicts_csv(&o), ["Global"]);
    let o = run(&["--params", "k=1,c=0,N=3", "sweep", "--base", "1,0.1,-0.1", "--u0r", "-1:1:3", "--rho0", "0.1:2:4"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(verdicts_csv(&o).len(), 12);
}

#[test]
fn phase_orbits_close_and_turn_clockwise() {
    let o = run(&["--params", "k=1,c=1,N=3", "phase", "--samples", "400"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines().skip(1) {
        rows.push(line.split(',').map(|x| x.parse().unwrap()).collect());
    }
    let orbits = rows.last().unwrap()[0] as usize + 1;
    assert!(orbits >= 2);
    for id in 0..orbits {
        let orbit: Vec<&Vec<f64>> = rows.iter().filter(|r| r[0] as usize == id).collect();
        let (first, last) = (orbit[0], orbit[orbit.len() - 1]);
        assert!((first[2] - last[2]).abs() + (first[4] - last[4]).abs() < 1e-6, "orbit {id} does not close");
        // clockwise in (s~, q): q > 0 lowers s~
        for w in orbit.windows(2) {
            if w[0][2] > 1e-3 && w[1][2] > 1e-3 {
                assert!(w[1][4] < w[0][4]);
            }
        }
    }
}

#[test]
fn simulate_reports_blowup() {
    let o = run(&["--params", "k=1,c=1,N=4", "--format", "json", "simulate", "--point", "1,0,0,-2,1"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["termination"], "BlowupDetected");
    assert!(v["tc"].as_f64().unwrap() > 0.0);
}

#[test]
fn verify_output_is_reproducible() {
    let args = ["--seed", "3", "verify", "--suite", "invariants"];
    let (a, b) = (run(&args), run(&args));
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.status.code(), b.status.code());
}

#[test]
fn bad_input_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"bogus": 1}"#).unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "classify", "--point", "1,0.1,0.1,0.15,1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
