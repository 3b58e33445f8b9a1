//! Runs the binary on small synthetic studies and checks exit codes.

use std::fs;
use std::path::Path;
use std::process::Command;

fn run(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_expressiveness")).current_dir(dir).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

/// Writes a 12-subject study under `dir/study`.
fn study(dir: &Path) -> std::path::PathBuf {
    fs::write(dir.join("synth.toml"), "[synth]\nn_subjects = 12\ntracking_stride = 5\n").unwrap();
    assert_eq!(run(dir, &["synth", "--config", "synth.toml", "--seed", "3", "--out", "study"]).0, 0);
    dir.join("study")
}

#[test]
fn full_pipeline_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let s = study(tmp.path());
    for cmd in ["score", "featurize", "train-eval"] {
        let (code, err) = run(&s, &[cmd, "--config", "config.toml", "--resamples", "1000"]);
        assert_eq!(code, 0, "{cmd}: {err}");
    }
    for f in ["scores.csv", "reliability.csv", "loadings.csv", "features.csv", "table3.csv", "table4.csv", "weights.csv", "models/model_all.txt"] {
        assert!(s.join("out").join(f).is_file(), "missing {f}");
    }
}

#[test]
fn validation_failures_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let s = study(tmp.path());
    // Stages run out of order.
    assert_eq!(run(&s, &["train-eval", "--config", "config.toml"]).0, 2);
    assert_eq!(run(&s, &["score", "--config", "config.toml", "--tasks", "fear"]).0, 2);
    assert_eq!(run(&s, &["score", "--config", "missing.toml"]).0, 2);
    assert_eq!(run(&s, &["score", "--config", "config.toml"]).0, 0);
    assert_eq!(run(&s, &["featurize", "--config", "config.toml"]).0, 0);
    assert_eq!(run(&s, &["train-eval", "--config", "config.toml", "--resamples", "10"]).0, 2);

    // Drop one rating so a clip has five raters.
    let ratings = s.join("ratings.csv");
    let text = fs::read_to_string(&ratings).unwrap();
    let kept: Vec<&str> = text.lines().enumerate().filter(|(i, _)| *i != 1).map(|(_, l)| l).collect();
    fs::write(&ratings, kept.join("\n") + "\n").unwrap();
    let (code, err) = run(&s, &["score", "--config", "config.toml"]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn degenerate_ratings_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let s = study(tmp.path());
    // Every answer identical: no between-clip variance.
    let ratings = s.join("ratings.csv");
    let text = fs::read_to_string(&ratings).unwrap();
    let mut lines = text.lines();
    let mut out = format!("{}\n", lines.next().unwrap());
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        out.push_str(&format!("{},2,2,2\n", f[..4].join(",")));
    }
    fs::write(&ratings, out).unwrap();
    let (code, err) = run(&s, &["score", "--config", "config.toml"]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let s = study(tmp.path());
    let mut snapshots = Vec::new();
    for out in ["a", "b"] {
        for cmd in ["score", "featurize", "train-eval"] {
            assert_eq!(run(&s, &[cmd, "--config", "config.toml", "--resamples", "1000", "--out", out]).0, 0);
        }
        let dir = s.join(out);
        let files: Vec<Vec<u8>> = ["scores.csv", "features.csv", "table3.csv", "table4.csv", "predictions.csv", "grid.csv"]
            .iter()
            .map(|f| fs::read(dir.join(f)).unwrap())
            .collect();
        snapshots.push(files);
    }
    assert_eq!(snapshots[0], snapshots[1]);
}
