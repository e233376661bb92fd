//! End-to-end runs through the batch interface and the binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use pglmm::cli::*;
use pglmm::ergodicity::{check_rank, DEFAULT_TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn write_dataset(dir: &Path) -> PathBuf {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mut s = String::from("passed,age,sex,studytime,school\n");
    for i in 0..80 {
        let age = 15.0 + (i % 7) as f64;
        let sex = if rng.random::<bool>() { "F" } else { "M" };
        let study = ["low", "mid", "high"][i % 3];
        let school = if i % 4 == 0 { "MS" } else { "GP" };
        let lin = -0.5 + 0.1 * (age - 17.0) + if study == "high" { 0.8 } else { 0.0 };
        let p = 1.0 / (1.0 + (-lin).exp());
        let y = u8::from(rng.random::<f64>() < p);
        s.push_str(&format!("{y},{age},{sex},{study},{school}\n"));
    }
    let path = dir.join("students.csv");
    fs::write(&path, s).unwrap();
    path
}

fn write_config(dir: &Path, q_scale: f64, samplers: &str) -> PathBuf {
    write_dataset(dir);
    let cfg = format!(
        r#"output_dir = "out"

[dataset]
path = "students.csv"
response = "passed"
fixed = ["age", "sex", "studytime"]
categorical = ["sex", "studytime"]
random = ["school"]

[prior]
mu0 = 0.0
q_scale = {q_scale}
a = 0.0144
b = 0.012

[run]
iterations = 3000
burn_in = 500
thin = 1
seed = 2024
samplers = {samplers}

[diagnostics]
max_lag = 5
"#
    );
    let path = dir.join("experiment.toml");
    fs::write(&path, cfg).unwrap();
    path
}

fn load(path: &Path) -> ExperimentConfig {
    ExperimentConfig::load(path).unwrap()
}

#[test]
fn ingest_dimensions_and_rank() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load(&write_config(dir.path(), 0.001, r#"["BG"]"#));
    cfg.dataset.level_order = LevelOrder::Sorted;
    let design = ingest(&cfg.dataset).unwrap();
    // intercept + age + sex[M] + 2 studytime dummies ("high" is the reference)
    assert_eq!(design.x.ncols(), 5);
    assert_eq!(design.blocks, vec![2]);
    assert_eq!(
        design.fixed_names,
        vec!["(Intercept)", "age", "sex[M]", "studytime[low]", "studytime[mid]"]
    );
    let (rank, full) = check_rank(&design.x, DEFAULT_TOL);
    assert!(full && rank == 5);
    // identical file and policy give an identical design
    assert_eq!(design, ingest(&cfg.dataset).unwrap());
}

#[test]
fn run_outputs_are_complete_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(&write_config(dir.path(), 0.001, r#"["BG", "FG"]"#));
    let first = run_experiment(&cfg).unwrap();
    let out = &cfg.output_dir;
    for name in [
        "draws_bg.csv",
        "draws_fg.csv",
        "diagnostics_bg.json",
        "diagnostics_fg.json",
        "timing_bg.json",
        "timing_fg.json",
        "ge_report.json",
        "comparison.md",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
    let snapshot = |name: &str| fs::read(out.join(name)).unwrap();
    let before: Vec<Vec<u8>> = ["draws_bg.csv", "draws_fg.csv", "diagnostics_bg.json", "diagnostics_fg.json", "ge_report.json"]
        .iter()
        .map(|n| snapshot(n))
        .collect();
    run_experiment(&cfg).unwrap();
    let after: Vec<Vec<u8>> = ["draws_bg.csv", "draws_fg.csv", "diagnostics_bg.json", "diagnostics_fg.json", "ge_report.json"]
        .iter()
        .map(|n| snapshot(n))
        .collect();
    assert_eq!(before, after);

    // draws files round-trip to the in-memory output
    for res in &first.samplers {
        let (names, draws) = read_draws(&out.join(format!("draws_{}.csv", res.kind.short_name()))).unwrap();
        assert_eq!(names, first.names);
        assert_eq!(draws, combined_draws(&res.output));
        assert_eq!(draws.nrows(), 2500);
    }

    // one row per sampler per parameter in the comparison table
    let table = fs::read_to_string(out.join("comparison.md")).unwrap();
    for name in &first.names {
        let rows = table.lines().filter(|l| l.starts_with(&format!("| {name} |"))).count();
        assert_eq!(rows, 4, "{name}");
    }
    assert!(table.contains("| beta_tau | BG |") && table.contains("| beta_tau | FG |"));
}

#[test]
fn proper_prior_ge_report_not_applicable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(&write_config(dir.path(), 0.001, r#"["BG"]"#));
    let res = run_experiment(&cfg).unwrap();
    assert!(!res.ge_report.applicable);
    let text = fs::read_to_string(cfg.output_dir.join("ge_report.json")).unwrap();
    assert!(text.contains("not applicable (proper β prior)"));
    assert!(!cfg.output_dir.join("draws_fg.csv").exists());
}

#[test]
fn failed_run_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load(&write_config(dir.path(), 0.0, r#"["BG"]"#));
    // intercept plus a full set of school indicators aliases M under a flat prior
    let err = run_experiment(&cfg).err().expect("rank-deficient flat model must fail");
    assert_eq!(err.exit_code(), 1);
    assert!(!cfg.output_dir.join("ge_report.json").exists());

    // An unwritable output location removes what was already written.
    cfg.prior.q_scale = 0.001;
    fs::create_dir_all(&cfg.output_dir).unwrap();
    fs::create_dir_all(cfg.output_dir.join("comparison.md")).unwrap();
    let err = run_experiment(&cfg).err().expect("writing over a directory must fail");
    assert_eq!(err.exit_code(), 1);
    assert!(!cfg.output_dir.join("draws_bg.csv").exists());
    assert!(!cfg.output_dir.join("ge_report.json").exists());
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pglmm"))
}

#[test]
fn binary_subcommands_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.001, r#"["BG", "FG"]"#);
    let out_dir = dir.path().join("cli_out");

    let status = binary()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--sampler", "bg", "--iters", "1500", "--burnin", "300", "--thin", "2", "--seed", "9", "--max-lag", "3", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let (_, draws) = read_draws(&out_dir.join("draws_bg.csv")).unwrap();
    assert_eq!(draws.nrows(), 600);
    assert!(!out_dir.join("draws_fg.csv").exists());

    let diag = binary()
        .arg("diagnose")
        .arg(out_dir.join("draws_bg.csv"))
        .args(["--max-lag", "3"])
        .output()
        .unwrap();
    assert!(diag.status.success());
    let report: serde_json::Value = serde_json::from_slice(&diag.stdout).unwrap();
    assert_eq!(report["max_lag"], 3);
    assert_eq!(report["draws"], 600);

    let ge = binary().args(["check-ge", "--config"]).arg(&cfg).output().unwrap();
    assert!(ge.status.success());
    let report: serde_json::Value = serde_json::from_slice(&ge.stdout).unwrap();
    assert_eq!(report["applicable"], false);

    let missing = binary().args(["run", "--config", "/nonexistent.toml"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
    let bad_flag = binary().args(["run", "--config"]).arg(&cfg).args(["--iters", "10", "--burnin", "10"]).output().unwrap();
    assert_eq!(bad_flag.status.code(), Some(1));
}
