use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn vodsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vodsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("vodsim-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = "n = 12\ns = 3\nd = 4\nk = 2\n";

#[test]
fn validate_default_and_bad_configs() {
    let ok = vodsim(&["validate"]);
    assert!(ok.status.success());

    let dir = scratch("validate");
    let bad = dir.join("bad.toml");
    fs::write(&bad, "n = 4\ns = 4\nc = 2\nd = 1\nk = 1\nm = 1\n").unwrap();
    let out = vodsim(&["validate", "--config", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stdout(&out).contains("s > c"), "{}", stdout(&out));

    let unknown = dir.join("unknown.toml");
    fs::write(&unknown, "q = 1\n").unwrap();
    assert!(!vodsim(&["validate", "--config", unknown.to_str().unwrap()]).status.success());
}

#[test]
fn bounds_report_catalog_cap() {
    let out = vodsim(&["bounds", "--raw"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("catalog_cap=3200"), "{text}");
    assert!(text.contains("connection_threshold=16/15"), "{text}");
    assert!(text.contains("upload_threshold=2"), "{text}");

    let human = stdout(&vodsim(&["bounds"]));
    assert!(human.contains("asymptotic"));
}

#[test]
fn bounds_flags_low_upload() {
    let dir = scratch("bounds");
    let cfg = dir.join("low.toml");
    fs::write(&cfg, "u = 1\n").unwrap();
    let out = vodsim(&["bounds", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("below threshold 1+1/c"));
}

#[test]
fn allocate_lists_every_replica() {
    let dir = scratch("allocate");
    let cfg = dir.join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = vodsim(&["allocate", "--config", cfg.to_str().unwrap(), "--seed", "3"]);
    assert!(out.status.success());
    let lines = stdout(&out)
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("video,") && !l.trim().is_empty())
        .count();
    // 12 boxes with 4 videos of storage each hold 48 video copies of 3 stripes.
    assert_eq!(lines, 12 * 4 * 3);
}

#[test]
fn generated_sequence_passes_check() {
    let dir = scratch("generate");
    let cfg = dir.join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let seq = dir.join("seq.txt");
    let gen = vodsim(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--p-f",
        "0.05",
        "--seed",
        "5",
        "--out",
        seq.to_str().unwrap(),
    ]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let check = vodsim(&[
        "check-sequence",
        "--config",
        cfg.to_str().unwrap(),
        seq.to_str().unwrap(),
        "--swarms-per-video",
        "2",
    ]);
    assert!(check.status.success(), "{}", stdout(&check));
    assert!(stdout(&check).starts_with("ok: 12 events"));
}

#[test]
fn generate_rejects_large_failure_rate() {
    let out = vodsim(&["generate", "--p-f", "0.5"]);
    assert!(!out.status.success());
}

#[test]
fn small_sweep_writes_csv() {
    let dir = scratch("run");
    let cfg = dir.join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out_dir = dir.join("out");
    let out = vodsim(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--experiment",
        "k-sweep",
        "--values",
        "2,3",
        "--runs",
        "2",
        "--adversary",
        "random,greedy",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(out_dir.join("k-sweep.csv")).unwrap();
    let runs = fs::read_to_string(out_dir.join("k-sweep-runs.csv")).unwrap();
    assert!(summary.starts_with('#'));
    let data: Vec<&str> = runs.lines().filter(|l| !l.starts_with('#')).collect();
    // header plus 2 values × 2 adversaries × 2 runs
    assert_eq!(data.len(), 1 + 8);
    let summary_rows = summary.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(summary_rows, 1 + 4);
}

#[test]
fn unknown_experiment_and_missing_trace_fail() {
    let dir = scratch("errors");
    let out = dir.join("out");
    let bad = vodsim(&["run", "--experiment", "nope", "--out", out.to_str().unwrap()]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("error"));

    let trace = vodsim(&["run", "--adversary", "trace", "--values", "2", "--runs", "1"]);
    assert!(!trace.status.success());
    assert!(String::from_utf8_lossy(&trace.stderr).contains("--trace"));
}
