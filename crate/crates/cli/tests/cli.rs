//! The `tailrisk` binary: exit codes, artifacts and reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tailrisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tailrisk"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn toy_config(dir: &Path) -> String {
    write_config(dir, "toy.toml", "benchmark = \"toy\"\n[train]\niterations = 60\n")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(tailrisk(&["--help"]).status.code(), Some(0));
    assert_eq!(tailrisk(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(tailrisk(&["train"]).status.code(), Some(1));
}

#[test]
fn invalid_configs_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let typo = write_config(dir.path(), "typo.toml", "benchmark = \"toy\"\n[train]\nalpah = 0.3\n");
    let out = tailrisk(&["train", "--config", &typo, "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpah"));
    let alpha = write_config(dir.path(), "alpha.toml", "benchmark = \"toy\"\n[train]\nalpha = 1.5\n");
    assert_eq!(tailrisk(&["train", "--config", &alpha]).status.code(), Some(1));
    let cfg = toy_config(dir.path());
    assert_eq!(tailrisk(&["train", "--config", &cfg, "--workers", "0"]).status.code(), Some(1));
}

#[test]
fn missing_files_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(tailrisk(&["train", "--config", path(&missing)]).status.code(), Some(2));
    let out = tailrisk(&["eval", "--checkpoint", path(&missing), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mismatched_checkpoint_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let run = dir.path().join("run");
    assert!(tailrisk(&["train", "--config", &cfg, "--out", path(&run)]).status.success());
    let sin = write_config(dir.path(), "sin.toml", "benchmark = \"sinusoid5\"\n");
    let ck = run.join("checkpoint.toml");
    let out = tailrisk(&["eval", "--checkpoint", path(&ck), "--config", &sin, "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
    let garbage = dir.path().join("garbage.toml");
    fs::write(&garbage, "format = 99\n").unwrap();
    let out = tailrisk(&["eval", "--checkpoint", path(&garbage), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn train_writes_artifacts_and_eval_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let run = dir.path().join("run");
    let out = tailrisk(&["train", "--config", &cfg, "--out", path(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["checkpoint.toml", "trace.csv", "snapshots.csv", "metrics.csv", "run_train.toml"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let trace = fs::read_to_string(run.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,mean_loss,xi_hat,leader_objective,follower_objective\n"));
    assert_eq!(trace.lines().count(), 61);

    let ck = run.join("checkpoint.toml");
    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    assert!(tailrisk(&["eval", "--checkpoint", path(&ck), "--out", path(&e1)]).status.success());
    assert!(tailrisk(&["eval", "--checkpoint", path(&ck), "--out", path(&e2), "--workers", "3"]).status.success());
    for f in ["eval_tasks.csv", "eval_metrics.csv"] {
        assert_eq!(fs::read(e1.join(f)).unwrap(), fs::read(e2.join(f)).unwrap(), "{f}");
    }
    // at alpha = 0 the tail metric is the plain average
    let e0 = dir.path().join("e0");
    assert!(tailrisk(&["eval", "--checkpoint", path(&ck), "--alpha", "0", "--out", path(&e0)]).status.success());
    let m = fs::read_to_string(e0.join("eval_metrics.csv")).unwrap();
    let row: Vec<&str> = m.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], row[2]);
}

#[test]
fn diagnostics_on_the_toy_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "toy.toml", "benchmark = \"toy\"\n");
    let run = dir.path().join("run");
    assert!(tailrisk(&["train", "--config", &cfg, "--out", path(&run)]).status.success());
    let trace = run.join("trace.csv");
    let snaps = run.join("snapshots.csv");
    let diag = dir.path().join("diag");
    let check = |args: &[&str]| {
        let mut full = vec!["diagnose", "--config", &cfg, "--out", path(&diag)];
        full.extend_from_slice(args);
        let out = tailrisk(&full);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    assert!(check(&["--which", "monotone", "--trace", path(&trace)]).contains(": PASS"));
    assert!(check(&["--which", "convergence", "--snapshots", path(&snaps)]).contains(": PASS"));
    assert!(check(&["--which", "linearity"]).contains(": PASS"));
    assert!(diag.join("linearity.csv").exists());
    // a required input that is absent is a configuration error
    let out = tailrisk(&["diagnose", "--config", &cfg, "--which", "monotone", "--out", path(&diag)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn quantile_bench_writes_sorted_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bench.toml",
        "benchmark = \"toy\"\n[bench]\nsizes = [50, 25]\ntrials = 20\n",
    );
    let out = tailrisk(&["quantile-bench", "--config", &cfg, "--out", path(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("quantile_bench.csv")).unwrap();
    let keys: Vec<String> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(2).collect::<Vec<_>>().join(","))
        .collect();
    assert_eq!(keys, ["kde,25", "kde,50", "mc,25", "mc,50"]);
}
