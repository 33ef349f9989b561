//! End-to-end runs of the command-line tool.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use softland::io::SolveReport;
use softland::ocp::Mode;

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softland"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = run(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn solved(dir: &Path) -> (PathBuf, PathBuf) {
    ok(dir, &["solve", "--mode", "pos"]);
    ok(dir, &["solve", "--mode", "eos"]);
    (dir.join("trajectory_pos.csv"), dir.join("trajectory_eos.csv"))
}

fn compare_rows(dir: &Path) -> Vec<(String, f64, f64, f64)> {
    fs::read_to_string(dir.join("compare.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect()
}

#[test]
fn solve_writes_trajectories_with_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let (pos, eos) = solved(dir.path());
    for path in [&pos, &eos] {
        assert!(path.exists());
        let meta: SolveReport = serde_json::from_slice(&fs::read(path.with_extension("json")).unwrap()).unwrap();
        assert!(meta.nodes > 10);
        assert!(meta.evaluation.energy_mj > 0.0);
        assert!(meta.evaluation.expected_velocity < 0.0);
        if meta.mode == Mode::Eos {
            assert!(meta.terminal_velocity.abs() <= 1e-6);
        }
    }
}

#[test]
fn compare_shows_dominance_and_self_comparison_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (pos, eos) = solved(dir.path());
    ok(dir.path(), &["compare", "--pos", pos.to_str().unwrap(), "--eos", eos.to_str().unwrap()]);
    let rows = compare_rows(dir.path());
    let get = |key: &str| rows.iter().find(|r| r.0.contains(key)).unwrap_or_else(|| panic!("no row {key}: {rows:?}"));
    let v = get("velocity");
    let a = get("acceleration");
    assert!(v.1.abs() < v.2.abs() && a.1.abs() < a.2.abs());
    for name in ["state_plane_pos.csv", "state_plane_eos.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(text.lines().count() > 10);
    }
    let same = tempfile::tempdir().unwrap();
    ok(same.path(), &["compare", "--pos", pos.to_str().unwrap(), "--eos", pos.to_str().unwrap()]);
    assert!(compare_rows(same.path()).iter().all(|r| r.3 == 0.0));
}

#[test]
fn truncated_trajectory_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let (pos, eos) = solved(dir.path());
    let text = fs::read_to_string(&pos).unwrap();
    let cut = dir.path().join("cut.csv");
    fs::write(&cut, &text[..text.len() / 2]).unwrap();
    let o = run(dir.path(), &["compare", "--pos", cut.to_str().unwrap(), "--eos", eos.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.toml");
    let o = run(dir.path(), &["--actuator", missing.to_str().unwrap(), "solve"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.toml"));
}

#[test]
fn zero_samples_is_an_argument_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["montecarlo", "--n", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn commands_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    for (dir, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        let (pos, _) = solved(dir.path());
        ok(dir.path(), &["--seed", seed, "montecarlo", "--n", "2000", "--trajectory", pos.to_str().unwrap()]);
    }
    for name in ["trajectory_pos.csv", "trajectory_pos.json", "trajectory_eos.csv", "montecarlo.json", "montecarlo.csv"] {
        let x = fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, fs::read(b.path().join(name)).unwrap(), "{name} differs between identical runs");
    }
    assert_ne!(fs::read(a.path().join("montecarlo.json")).unwrap(), fs::read(c.path().join("montecarlo.json")).unwrap());
}

#[test]
fn sweep_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["sweep", "--sigmas", "1e-6..1e-4", "--points", "3"]);
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), softland::io::SWEEP_HEADER.join(","));
    assert_eq!(lines.count(), 3);
}

#[test]
fn identify_reads_a_simulated_dataset() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["dataset", "--amplitudes", "28..32"]);
    let data = dir.path().join("dataset.csv");
    ok(dir.path(), &["identify", "--dataset", data.to_str().unwrap(), "--target-cost", "1e-6"]);
    let fit: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("fit.json")).unwrap()).unwrap();
    assert!(fit["final_cost"].as_f64().unwrap() <= 1e-6);
    let toml = fs::read_to_string(dir.path().join("fitted_actuator.toml")).unwrap();
    softland::config::parse_actuator(&toml, Path::new("fitted_actuator.toml")).unwrap();
}
