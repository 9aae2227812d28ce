use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn gnep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gnep")).args(args).output().expect("binary runs")
}

fn scenario(name: &str) -> String {
    scenarios().join(name).display().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Data rows of a stamped CSV as `header -> column` lookups.
fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# manifest="));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn short_race(dir: &Path) -> String {
    let path = dir.join("short_race.toml");
    std::fs::write(
        &path,
        "name = \"short\"\n[race]\nhorizon = 6\nduration = 0.3\nalpha_ego = 0.05\n\
         cars = [{ v = 1.5, s = 2.0 }, { v = 2.0, s = 0.3 }]\n[mc]\nruns = 2\nseed = 11\n",
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn solve_example1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = gnep(&["solve", &scenario("example1.toml"), "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = read_json(&dir.path().join("solution.json"));
    let x = &doc["candidates"][0]["x"];
    assert!((x[0].as_f64().unwrap() - 0.75).abs() < 1e-6);
    assert!((x[1].as_f64().unwrap() - 0.25).abs() < 1e-6);
    let manifest = read_json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["subcommand"], "solve");
    assert_eq!(manifest["scenario_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn solve_harker_finds_both_equilibria() {
    let o = gnep(&["solve", &scenario("harker.toml"), "--alpha", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    let mut xs: Vec<(f64, f64)> = doc["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| (c["x"][0].as_f64().unwrap(), c["x"][1].as_f64().unwrap()))
        .collect();
    xs.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert_eq!(xs.len(), 2, "{xs:?}");
    assert!((xs[0].0 - 5.0).abs() < 1e-6 && (xs[0].1 - 9.0).abs() < 1e-6);
    assert!((xs[1].0 - 10.0).abs() < 1e-6 && (xs[1].1 - 5.0).abs() < 1e-6);
}

#[test]
fn explicit_players_match_the_reference() {
    let a = gnep(&["solve", &scenario("example1.toml")]);
    let b = gnep(&["solve", &scenario("example1_explicit.toml")]);
    assert!(a.status.success() && b.status.success());
    let xa: Value = serde_json::from_slice(&a.stdout).unwrap();
    let xb: Value = serde_json::from_slice(&b.stdout).unwrap();
    for k in 0..2 {
        let (u, v) = (xa["candidates"][0]["x"][k].as_f64().unwrap(), xb["candidates"][0]["x"][k].as_f64().unwrap());
        assert!((u - v).abs() < 1e-8);
    }
}

#[test]
fn missing_file_is_an_input_error() {
    let o = gnep(&["solve", "/definitely/not/here.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("here.toml"));
}

#[test]
fn malformed_scenario_points_at_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "name = \"bad\"\n[game]\nplayers = [\n  { dim = 1, cost = \"x0 + x9\" },\n]\n").unwrap();
    let o = gnep(&["solve", &path.display().to_string()]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("bad.toml:4:"), "{msg}");
    assert!(msg.contains("x9"), "{msg}");
}

#[test]
fn bad_flags_exit_with_input_code() {
    let o = gnep(&["sweep", &scenario("example1.toml"), "--grid", "0.1:0.9"]);
    assert_eq!(o.status.code(), Some(1));
    let o = gnep(&["solve", &scenario("example1.toml"), "--rule", "sideways"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_follows_the_closed_form() {
    let o = gnep(&["sweep", &scenario("example1.toml"), "--grid", "0.1:0.9:0.1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = csv_rows(std::str::from_utf8(&o.stdout).unwrap());
    let (ia, ix) = (0, header.iter().position(|h| h == "x1").unwrap());
    assert_eq!(rows.len(), 9);
    for r in &rows {
        let alpha: f64 = r[ia].parse().unwrap();
        let x: f64 = r[ix].parse().unwrap();
        assert!((x - (1.0 - alpha / 2.0)).abs() < 1e-6, "alpha {alpha}: x {x}");
    }
}

#[test]
fn three_car_oracle() {
    let o = gnep(&["oracle", "three_car", "--alpha", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["positions"][1].as_f64().unwrap(), 1.125);
    assert_eq!(doc["positions"][2].as_f64().unwrap(), 1.125);
    assert_eq!(gnep(&["oracle", "nonsense"]).status.code(), Some(1));
}

#[test]
fn select_reaches_the_symmetric_split() {
    let o = gnep(&["select", &scenario("example1.toml")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let start = text.find("\n{").unwrap() + 1;
    let doc: Value = serde_json::from_str(&text[start..]).unwrap();
    assert!((doc["alpha"][0].as_f64().unwrap() - 0.5).abs() < 1e-4);
    assert!((doc["J0"].as_f64().unwrap() - 0.125).abs() < 1e-6);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = gnep(&["sweep", &scenario("three_car.toml"), "--out", &d.path().display().to_string()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("sweep.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert!(a.path().join("manifest.json").exists());
}

#[test]
fn every_csv_is_stamped() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    assert!(gnep(&["select", &scenario("three_car.toml"), "--out", &out]).status.success());
    assert!(gnep(&["sweep", &scenario("harker.toml"), "--out", &out, "--grid", "2.8:3.2:0.2"]).status.success());
    let mut seen = 0;
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "csv") {
            let text = std::fs::read_to_string(&p).unwrap();
            assert!(text.starts_with("# manifest="), "{}", p.display());
            assert!(text.lines().next().unwrap().contains(" seed="));
            seen += 1;
        }
    }
    assert_eq!(seen, 2);
}

#[test]
fn race_writes_a_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let path = short_race(dir.path());
    let out = dir.path().join("out");
    let o = gnep(&["race", &path, "--out", &out.display().to_string()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = read_json(&out.join("race.json"));
    assert_eq!(doc["ego"], 1);
    let (header, rows) = csv_rows(&std::fs::read_to_string(out.join("trajectory.csv")).unwrap());
    assert_eq!(header[0], "t");
    assert_eq!(rows.len() % 2, 0);
    assert!(!rows.is_empty());
}

#[test]
fn parallel_mc_matches_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let path = short_race(dir.path());
    let seq = dir.path().join("seq");
    let par = dir.path().join("par");
    let o = gnep(&["mc", &path, "--runs", "2", "--out", &seq.display().to_string()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = gnep(&["mc", &path, "--runs", "2", "--parallel", "2", "--out", &par.display().to_string()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let runs = |d: &Path| csv_rows(&std::fs::read_to_string(d.join("mc_runs.csv")).unwrap()).1;
    assert_eq!(runs(&seq), runs(&par));
    assert_eq!(runs(&seq).len(), 2);
    let (_, summary) = csv_rows(&std::fs::read_to_string(seq.join("mc_summary.csv")).unwrap());
    assert_eq!(summary.len(), 2);
}
