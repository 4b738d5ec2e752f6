//! End-to-end tests of the `sgmatch` binary: determinism, error exits,
//! resume semantics, and report round trips.

use std::path::Path;
use std::process::{Command, Output};

fn sgmatch(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgmatch"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn gen_is_deterministic_and_counts_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["gen", "--out", "a", "--pairs", "8", "--seed", "7", "--threshold", "1"];
    assert_success(&sgmatch(&args, dir.path()));
    let args2 = ["gen", "--out", "b", "--pairs", "8", "--seed", "7", "--threshold", "1"];
    assert_success(&sgmatch(&args2, dir.path()));

    let a = std::fs::read(dir.path().join("a/train.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b/train.jsonl")).unwrap();
    assert_eq!(a, b, "same args must produce identical bytes");
    assert_eq!(a.iter().filter(|&&c| c == b'\n').count(), 8, "one record per pair");
}

#[test]
fn gen_rejects_single_pair_with_config_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = sgmatch(&["gen", "--out", "x", "--pairs", "1", "--seed", "7"], dir.path());
    assert_eq!(out.status.code(), Some(2), "config errors exit with 2");
}

#[test]
fn train_eval_retrieve_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    assert_success(&sgmatch(
        &["gen", "--out", "data", "--pairs", "8", "--seed", "7", "--threshold", "1"],
        dir.path(),
    ));
    assert_success(&sgmatch(
        &[
            "train", "--data", "data", "--out", "run", "--seed", "7", "--epochs", "3",
            "--batch", "4", "--dropout", "0.0",
        ],
        dir.path(),
    ));
    assert!(dir.path().join("run/best.ckpt").exists());
    assert!(dir.path().join("run/last.ckpt").exists());

    // the margin lands verbatim in the config snapshot
    let snapshot = std::fs::read_to_string(dir.path().join("run/config.json")).unwrap();
    assert!(snapshot.contains("\"margin\": 0.35"), "{snapshot}");

    // eval twice: identical reports
    for out_dir in ["r1", "r2"] {
        assert_success(&sgmatch(
            &["eval", "--data", "data", "--split", "val", "--ckpt", "run/best.ckpt", "--out", out_dir],
            dir.path(),
        ));
    }
    let m1 = std::fs::read(dir.path().join("r1/metrics.tsv")).unwrap();
    let m2 = std::fs::read(dir.path().join("r2/metrics.tsv")).unwrap();
    assert_eq!(m1, m2);
    assert!(dir.path().join("r1/pair_scores.jsonl").exists());

    // retrieval: breakdown rows sum exactly
    let out = sgmatch(
        &[
            "retrieve", "--data", "data", "--split", "val", "--ckpt", "run/best.ckpt",
            "--query", "img00008#0", "--direction", "text_to_image", "--k", "2",
        ],
        dir.path(),
    );
    assert_success(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    for line in text.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit())) {
        let cols: Vec<f64> = line
            .split_whitespace()
            .skip(2)
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(cols.len(), 4);
        assert!((cols[0] + cols[1] + cols[2] - cols[3]).abs() < 1e-3, "{line}");
    }

    // unknown id is a data error
    let out = sgmatch(
        &[
            "retrieve", "--data", "data", "--split", "val", "--ckpt", "run/best.ckpt",
            "--query", "nope", "--direction", "text_to_image",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));

    // missing checkpoint is a clean data error
    let out = sgmatch(
        &["eval", "--data", "data", "--split", "val", "--ckpt", "missing.ckpt", "--out", "r3"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn resume_appends_log_without_rerunning() {
    let dir = tempfile::tempdir().unwrap();
    assert_success(&sgmatch(
        &["gen", "--out", "data", "--pairs", "6", "--seed", "3", "--threshold", "1"],
        dir.path(),
    ));

    let base = [
        "train", "--data", "data", "--seed", "11", "--batch", "4", "--dropout", "0.0",
    ];
    // straight 4-epoch run
    let mut straight = base.to_vec();
    straight.extend(["--out", "straight", "--epochs", "4"]);
    assert_success(&sgmatch(&straight, dir.path()));

    // 2 epochs, then resume to 4
    let mut first = base.to_vec();
    first.extend(["--out", "resumed", "--epochs", "2"]);
    assert_success(&sgmatch(&first, dir.path()));
    let mut second = base.to_vec();
    second.extend(["--out", "resumed", "--epochs", "4", "--resume", "resumed/last.ckpt"]);
    assert_success(&sgmatch(&second, dir.path()));

    let read_log = |name: &str| -> Vec<String> {
        std::fs::read_to_string(dir.path().join(name).join("train_log.jsonl"))
            .unwrap()
            .lines()
            .map(String::from)
            .collect()
    };
    let straight_log = read_log("straight");
    let resumed_log = read_log("resumed");
    assert_eq!(straight_log.len(), 4);
    assert_eq!(resumed_log.len(), 4, "resume appends, never re-runs epochs");
    assert_eq!(straight_log, resumed_log, "continued trajectory matches uninterrupted run");

    let a = std::fs::read(dir.path().join("straight/last.ckpt")).unwrap();
    let b = std::fs::read(dir.path().join("resumed/last.ckpt")).unwrap();
    assert_eq!(a, b, "final checkpoints byte-identical");
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    assert_success(&sgmatch(
        &["gen", "--out", "data", "--pairs", "6", "--seed", "3", "--threshold", "1"],
        dir.path(),
    ));
    std::fs::write(dir.path().join("run.conf"), "epochs = 2\nmargin = 0.5\nbatch = 4\n").unwrap();
    assert_success(&sgmatch(
        &[
            "train", "--data", "data", "--out", "run", "--seed", "3", "--config", "run.conf",
            "--margin", "0.35", "--dropout", "0.0",
        ],
        dir.path(),
    ));
    let snapshot = std::fs::read_to_string(dir.path().join("run/config.json")).unwrap();
    assert!(snapshot.contains("\"margin\": 0.35"), "flag beats config file: {snapshot}");
    assert!(snapshot.contains("\"epochs\": 2"), "config file fills the gap: {snapshot}");
}
