use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn fracspend(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fracspend"));
    cmd.args(args).env_remove("SIM_STEP_BUDGET");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn honest_run_exits_zero_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.toml");
    let o = fracspend(&["run", path(&scenario("pay_honest.scn")), "--trials", "3", "--out", path(&out)], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let report = std::fs::read_to_string(&out).unwrap();
    assert!(report.contains("scenario = \"pay_honest\""));
    assert_eq!(report.matches("[[trial]]").count(), 3);
}

#[test]
fn injected_double_spend_exits_one() {
    let o = fracspend(&["run", path(&scenario("double_spend_injected.scn"))], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("fail no-double-spending"));
}

#[test]
fn malformed_scenario_exits_two_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scn");
    std::fs::write(&bad, "name = \"bad\"\nseed = 1\ntrials = 1\nclients = [\"a\"]\n\n[params]\nn = \"many\"\n").unwrap();
    let o = fracspend(&["run", path(&bad)], &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.scn:7:"), "{err}");
}

#[test]
fn missing_file_exits_two() {
    let o = fracspend(&["run", "/nonexistent/none.scn"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exhausted_step_budget_exits_three() {
    let o = fracspend(&["run", path(&scenario("settle_redeem.scn")), "--trials", "1"], &[("SIM_STEP_BUDGET", "50")]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("non-quiescence"));
}

#[test]
fn override_replaces_scenario_values() {
    let o = fracspend(
        &["run", path(&scenario("pay_honest.scn")), "--trials", "1", "--override", "name=renamed", "--override", "params.k2=20"],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = String::from_utf8_lossy(&o.stdout);
    assert!(report.contains("scenario = \"renamed\""));
    assert!(report.contains("k2 = 20"));
}

#[test]
fn reports_are_reproducible_across_runs_and_workers() {
    let file = scenario("rushing.scn");
    let run = |jobs: &str| fracspend(&["run", path(&file), "--trials", "4", "--seed", "99", "--jobs", jobs], &[]).stdout;
    let a = run("1");
    assert!(!a.is_empty());
    assert_eq!(a, run("1"));
    assert_eq!(a, run("3"));
}

#[test]
fn stats_and_complexity_verbs_report() {
    let o = fracspend(&["stats", path(&scenario("stats.scn")), "--trials", "200"], &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("chernoff_bound"));
    let o = fracspend(&["complexity", path(&scenario("complexity.scn")), "--trials", "1"], &[]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("[[row]]"));
}
