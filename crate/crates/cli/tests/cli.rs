use std::path::PathBuf;
use std::process::{Command, Output};

use gridmarket::scenarios::{builtin_scenarios, read_csv, Scenario};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gridmarket"));
    c.env_remove("GRIDMARKET_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn gridmarket")
}

fn scenario_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"))
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn help_lists_every_flag() {
    let o = run(&["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for flag in [
        "--config", "--out", "--alpha", "--lambda", "--tol", "--max-iter", "--seed", "--solver", "--rho", "--jobs",
        "--strict", "--name",
    ] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
    for sub in ["solve", "sweep", "admm", "scenario", "validate"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn shipped_configs_match_builtins() {
    for s in builtin_scenarios() {
        let text = std::fs::read_to_string(scenario_file(&s.name)).unwrap();
        assert_eq!(Scenario::from_json(&text).unwrap(), s, "{}", s.name);
    }
}

#[test]
fn shipped_configs_validate() {
    for name in ["tight", "unbalanced_tight", "loose"] {
        let path = scenario_file(name);
        let o = run(&["validate", "--config", path.to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", stdout(&o));
    }
}

#[test]
fn scenario_tight_writes_81_rows() {
    let o = run(&["scenario", "--name", "tight"]);
    assert!(o.status.success());
    let records = read_csv(o.stdout.as_slice()).unwrap();
    assert_eq!(records.len(), 81);
    assert!(records.iter().all(|r| r.converged));
}

#[test]
fn bad_alpha_exits_one_naming_the_field() {
    let o = run(&["solve", "--name", "tight", "--alpha", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("discount_cap"));
}

#[test]
fn invalid_config_lists_violations() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = gridmarket::scenarios::builtin_scenario("loose").unwrap();
    s.surplus[0] = -1.0;
    s.alpha_grid.push(2.0);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, s.to_json().unwrap()).unwrap();
    let o = run(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).lines().count() >= 2);
}

#[test]
fn unknown_scenario_fails() {
    let o = run(&["scenario", "--name", "nope"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_output_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario_file("unbalanced_tight");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (out, jobs) in [(&a, "1"), (&b, "2")] {
        let o = run(&[
            "sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", jobs, "--seed", "7",
        ]);
        assert!(o.status.success());
    }
    let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(!x.is_empty());
    assert_eq!(x, y);
    // stdout carries the same bytes as --out
    let o = run(&["sweep", "--config", cfg.to_str().unwrap(), "--seed", "7"]);
    assert_eq!(o.stdout, x);
}

#[test]
fn seed_env_matches_flag() {
    let a = run(&["solve", "--name", "loose", "--alpha", "0.4", "--seed", "11"]);
    let b = bin()
        .args(["solve", "--name", "loose", "--alpha", "0.4"])
        .env("GRIDMARKET_SEED", "11")
        .output()
        .unwrap();
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn solve_reports_requested_alpha_and_weights() {
    let o = run(&["solve", "--name", "loose", "--alpha", "0.35", "--lambda", "0.1,0.1,0.2,0.2,0.2,0.2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["alpha"], 0.35);
    assert_eq!(v["converged"], true);
    assert_eq!(v["solver"], "central");
    let bad = run(&["solve", "--name", "loose", "--lambda", "0.5,0.5"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn strict_non_convergence_exits_two() {
    let o = run(&["solve", "--name", "tight", "--alpha", "0.3", "--max-iter", "1", "--tol", "1e-14", "--strict"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let lenient = run(&["solve", "--name", "tight", "--alpha", "0.3", "--max-iter", "1", "--tol", "1e-14"]);
    assert_eq!(lenient.status.code(), Some(0));
}

#[test]
fn admm_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    let o = run(&[
        "admm", "--name", "unbalanced_tight", "--alpha", "0.3", "--rho", "1", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let summary = stdout(&o);
    assert!(summary.contains("converged=true"), "{summary}");
    let trace = std::fs::read_to_string(&out).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("iteration,primal_residual,dual_residual,objective"));
    assert!(lines.all(|l| !l.contains("inf") && !l.contains("NaN")));
}

#[test]
fn admm_solver_flag_solves_through_regions() {
    let o = run(&["solve", "--name", "loose", "--alpha", "0.3", "--solver", "admm", "--rho", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["solver"], "admm");
}
