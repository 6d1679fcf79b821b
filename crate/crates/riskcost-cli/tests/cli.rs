//! End-to-end checks of the binary: defaults, exit codes, file outputs,
//! sidecar reconstruction, and worker-count independence.

use std::path::Path;
use std::process::{Command, Output};

fn riskcost(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskcost"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

const SMALL_SWEEP: &[&str] = &[
    "sweep",
    "--assets",
    "60",
    "--periods",
    "180",
    "--trials",
    "3",
    "--eta-max",
    "4",
    "--eta-step",
    "2",
    "--solver",
    "closed-form",
    "--seed",
    "7",
];

#[test]
fn theory_with_defaults_covers_the_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = riskcost(&["theory", "--out", "."], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("theory.dat")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 1 + 51, "default grid is 0..=100 step 2");
    // eta = 0 row carries the closed-form value (alpha = 3, Pareto (2,4,1))
    assert!(
        lines[1].starts_with("0.00000000e0 3.65714286e0"),
        "unexpected first row: {}",
        lines[1]
    );
    assert!(dir.path().join("theory.meta.toml").exists());
}

#[test]
fn invalid_grid_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = riskcost(
        &["sweep", "--eta-min", "5", "--eta-max", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eta_max"));
}

#[test]
fn unknown_config_key_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[market]\nassetz = 5\n").unwrap();
    let out = riskcost(&["theory", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("assetz"));
}

#[test]
fn sweep_outputs_reconstruct_from_the_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let first = riskcost(&[SMALL_SWEEP, &["--out", "a"]].concat(), dir.path());
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    for name in ["a/sweep.dat", "a/sweep.meta.toml", "a/sweep_theory.dat"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }

    // re-run purely from the sidecar: byte-identical table
    let second = riskcost(
        &["sweep", "--config", "a/sweep.meta.toml", "--out", "b"],
        dir.path(),
    );
    assert!(second.status.success(), "{}", String::from_utf8_lossy(&second.stderr));
    let table_a = std::fs::read(dir.path().join("a/sweep.dat")).unwrap();
    let table_b = std::fs::read(dir.path().join("b/sweep.dat")).unwrap();
    assert_eq!(table_a, table_b);

    // worker count does not change the bytes
    let third = riskcost(
        &[SMALL_SWEEP, &["--out", "c", "--jobs", "1"]].concat(),
        dir.path(),
    );
    let fourth = riskcost(
        &[SMALL_SWEEP, &["--out", "d", "--jobs", "2"]].concat(),
        dir.path(),
    );
    assert!(third.status.success() && fourth.status.success());
    let table_c = std::fs::read(dir.path().join("c/sweep.dat")).unwrap();
    let table_d = std::fs::read(dir.path().join("d/sweep.dat")).unwrap();
    assert_eq!(table_a, table_c);
    assert_eq!(table_c, table_d);

    // the sweep table has one row per grid point plus the header
    let text = String::from_utf8(table_a).unwrap();
    assert_eq!(text.lines().count(), 1 + 3);
}

#[test]
fn solve_reports_both_solvers_and_dumps_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = riskcost(
        &[
            "solve",
            "--assets",
            "50",
            "--periods",
            "150",
            "--eta",
            "2",
            "--seed",
            "3",
            "--dump-ensemble",
            "ensemble.dat",
            "--dump-returns",
            "returns.dat",
            "--dump-wishart",
            "wishart.dat",
            "--trace",
            "trace.dat",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout(&out);
    assert!(report.contains("closed-form"));
    assert!(report.contains("descent"));
    assert!(report.contains("epsilon"));
    assert!(report.contains("max weight gap"));
    for name in ["ensemble.dat", "returns.dat", "wishart.dat", "trace.dat"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }

    // the dumped ensemble loads back in for another solve
    let reload = riskcost(
        &[
            "solve",
            "--periods",
            "150",
            "--eta",
            "2",
            "--seed",
            "3",
            "--ensemble",
            "ensemble.dat",
        ],
        dir.path(),
    );
    assert!(
        reload.status.success(),
        "{}",
        String::from_utf8_lossy(&reload.stderr)
    );
    assert!(stdout(&reload).contains("assets=50"));
}

#[test]
fn validate_filter_runs_a_single_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = riskcost(&["validate", "--only", "sampler"], dir.path());
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("PASS sampler-moment-fidelity"));
    assert!(text.contains("all 1 checks passed"));

    let none = riskcost(&["validate", "--only", "nonexistent"], dir.path());
    assert_eq!(none.status.code(), Some(2));
}

#[test]
fn output_directory_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_riskcost"))
        .args(["theory"])
        .env("RISKCOST_OUT", &target)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(target.join("theory.dat").exists());
}
