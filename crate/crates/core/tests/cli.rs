//! The `ilpc` binary: exit codes, output shape and flag sources.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ilpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ilpc"))
        .args(args)
        .env_remove("ILPC_THREADS")
        .output()
        .unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn blobs_file(dir: &Path) -> PathBuf {
    let path = dir.join("blobs.npy");
    let out = ilpc(&[
        "gen-blobs", "--out", path.to_str().unwrap(), "--classes", "8", "--dim", "16",
        "--per-class", "30", "--sigma", "0.3", "--seed", "1",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    path
}

fn bench_args(features: &Path) -> Vec<String> {
    ["bench", "--features", features.to_str().unwrap(), "--tasks", "4", "--iterations", "20", "--queries", "5"]
        .map(String::from)
        .to_vec()
}

fn run(args: &[String]) -> Output {
    ilpc(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn bench_prints_mean_and_interval() {
    let dir = tempfile::tempdir().unwrap();
    let f = blobs_file(dir.path());
    let out = run(&bench_args(&f));
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("full"), "{stdout}");
    assert!(stdout.contains('±'), "{stdout}");
}

#[test]
fn zero_shot_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = blobs_file(dir.path());
    let mut args = bench_args(&f);
    args.extend(["--k-shot".into(), "0".into()]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("--k-shot"), "{}", text(&out.stderr));
}

#[test]
fn too_many_classes_for_the_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = blobs_file(dir.path());
    let mut args = bench_args(&f);
    args.extend(["--n-way".into(), "9".into()]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("has 8"), "{}", text(&out.stderr));
}

#[test]
fn missing_file_is_a_runtime_error() {
    let out = ilpc(&["bench", "--features", "/nonexistent/feats.npy", "--tasks", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("/nonexistent/feats.npy"), "{}", text(&out.stderr));
}

#[test]
fn component_grid_has_seven_rows() {
    let dir = tempfile::tempdir().unwrap();
    let f = blobs_file(dir.path());
    let csv = dir.path().join("t1.csv");
    let out = ilpc(&[
        "ablate", "--grid", "table1", "--features", f.to_str().unwrap(), "--tasks", "3",
        "--iterations", "20", "--queries", "5", "--csv", csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    for name in ["inductive", "lp", "lp-balance", "lp-clean", "full", "iprob", "class-balance"] {
        assert!(stdout.lines().any(|l| l.split_whitespace().next() == Some(name)), "{name}: {stdout}");
    }
    let csv = std::fs::read_to_string(csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("variant,n_tasks,mean,ci95,seconds_per_task"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r.split(',').count() == 5));
}

#[test]
fn explicit_flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let f = blobs_file(dir.path());
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# defaults\ntasks = 3\nqueries = 5\niterations = 20\n").unwrap();
    let base = ["bench", "--config", cfg.to_str().unwrap(), "--features", f.to_str().unwrap()];

    let out = ilpc(&base);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains(" 3 "), "{}", text(&out.stdout));

    let mut args = base.to_vec();
    args.extend(["--tasks", "2"]);
    let out = ilpc(&args);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains(" 2 "), "{}", text(&out.stdout));
}

#[test]
fn thread_count_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let f = blobs_file(dir.path());
    let args = bench_args(&f);
    let with_env = |v: &str| {
        Command::new(env!("CARGO_BIN_EXE_ilpc")).args(&args).env("ILPC_THREADS", v).output().unwrap()
    };
    let bad = with_env("0");
    assert_eq!(bad.status.code(), Some(2));
    assert!(text(&bad.stderr).contains("threads"), "{}", text(&bad.stderr));

    let one = with_env("1");
    let two = with_env("2");
    assert!(one.status.success() && two.status.success());
    let accuracy = |o: &Output| text(&o.stdout).lines().nth(1).map(|l| l.split_whitespace().take(3).collect::<Vec<_>>().join(" "));
    assert_eq!(accuracy(&one), accuracy(&two));
}

#[test]
fn loss_histogram_writes_two_columns() {
    let dir = tempfile::tempdir().unwrap();
    let f = blobs_file(dir.path());
    let csv = dir.path().join("h.csv");
    let out = ilpc(&[
        "losshist", "--features", f.to_str().unwrap(), "--examples", "100", "--iterations", "30",
        "--csv", csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let body = std::fs::read_to_string(csv).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("loss,is_clean"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 100);
    assert_eq!(rows.iter().filter(|r| r.ends_with(",0")).count(), 20);
}

#[test]
fn episode_dump_writes_split_files() {
    let dir = tempfile::tempdir().unwrap();
    let f = blobs_file(dir.path());
    let dump = dir.path().join("dump");
    let out = ilpc(&[
        "episode", "--features", f.to_str().unwrap(), "--iterations", "20", "--dump", dump.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let files: Vec<String> = std::fs::read_dir(&dump)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(files.iter().any(|n| n.contains("support")), "{files:?}");
    assert!(files.iter().any(|n| n.contains("query")), "{files:?}");
}
