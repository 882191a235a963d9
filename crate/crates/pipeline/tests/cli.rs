use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn moe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moe")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = moe(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Nonzero exit with exactly one machine-readable error line on stderr.
fn fails(args: &[&str], kind: &str) {
    let out = moe(args);
    assert!(!out.status.success(), "{args:?} succeeded");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().find(|l| l.starts_with("error kind=")).unwrap_or_else(|| panic!("{stderr}"));
    assert!(line.starts_with(&format!("error kind={kind} message=")), "{line}");
}

fn digest(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn dataset_training_and_evaluation_round_trip() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d.bin");
    let ckpt = dir.path().join("m.ckpt");
    let report = dir.path().join("eval");

    let summary = ok(&["gen-dataset", "--records", "120", "--seed", "4", "--out", s(&data)]);
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("class,records"));
    let total: usize = lines.map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 120);

    let trained = ok(&["train", "--data", s(&data), "--epochs", "1", "--arch", "mlp", "--out", s(&ckpt)]);
    assert!(trained.starts_with("epochs,1,loss,"), "{trained}");
    let history = fs::read_to_string(dir.path().join("m.ckpt.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);

    let acc = ok(&["eval-moe", "--data", s(&data), "--model", s(&ckpt), "--out", s(&report)]);
    assert!(acc.contains("accuracy,") && acc.contains("n_m_accuracy,"));
    let confusion = fs::read_to_string(report.join("confusion.csv")).unwrap();
    assert_eq!(confusion.lines().count(), 19);
    assert!(report.join("accuracy_vs_snr.csv").exists());

    for task in ["5", "9"] {
        let r = dir.path().join(format!("eval{task}"));
        ok(&["eval-moe", "--data", s(&data), "--moe", "oracle", "--task", task, "--out", s(&r)]);
        let rows = fs::read_to_string(r.join("confusion.csv")).unwrap().lines().count();
        assert_eq!(rows, task.parse::<usize>().unwrap() + 1);
        let acc = fs::read_to_string(r.join("accuracy_vs_snr.csv")).unwrap();
        assert!(acc.lines().count() > 1);
    }

    let baseline = ok(&["baseline", "--data", s(&data)]);
    assert!(baseline.starts_with("criterion,true_n_m,estimated_n_m,count"));
    assert!(baseline.contains("\nmdl,") && baseline.contains("\naic,"));

    let doa = ok(&["eval-doa", "--moe", "model", "--model", s(&ckpt), "--trials", "3", "--class", "1"]);
    assert!(doa.lines().count() > 1);
}

#[test]
fn fixed_seeds_give_identical_files() {
    let dir = TempDir::new().unwrap();
    let paths: Vec<_> = (0..2).map(|i| dir.path().join(format!("d{i}.bin"))).collect();
    for p in &paths {
        ok(&["gen-dataset", "--records", "40", "--seed", "9", "--array", "ura", "--out", s(p)]);
    }
    assert_eq!(digest(&paths[0]), digest(&paths[1]));
    let other = dir.path().join("other.bin");
    ok(&["gen-dataset", "--records", "40", "--seed", "10", "--array", "ura", "--out", s(&other)]);
    assert_ne!(digest(&paths[0]), digest(&other));

    let a = ok(&["eval-doa", "--trials", "4", "--seed", "2", "--array", "uca12"]);
    let b = ok(&["eval-doa", "--trials", "4", "--seed", "2", "--array", "uca12"]);
    assert_eq!(a, b);
    assert!(a.starts_with("quantile,"), "{a}");
}

#[test]
fn single_run_writes_report_and_spectrum() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    ok(&["run", "--class", "3", "--array", "uca12", "--seed", "1", "--out", s(&out)]);
    for f in ["report.txt", "doas.csv", "spectrum.csv"] {
        assert!(fs::metadata(out.join(f)).unwrap().len() > 0, "{f}");
    }
    let over = ok(&["run", "--class", "19", "--seed", "1"]);
    assert!(over.contains("overloaded"), "{over}");
}

#[test]
fn association_counts_cover_both_last_set_rules() {
    let text = ok(&["eval-assoc", "--trials", "20"]);
    assert!(text.contains("# last set: correlate") && text.contains("# last set: take-rest"));
    assert_eq!(text.matches("n_m,").count(), 2);
}

#[test]
fn config_file_overrides_defaults() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, "# short run\ntrials = 2\nclass = 1\nsnr_min_db = 20\nsnr_max_db = 20\n").unwrap();
    let q = ok(&["eval-doa", "--config", s(&cfg), "--array", "uca12"]);
    assert_eq!(q.lines().count(), 8);
}

#[test]
fn failures_exit_nonzero_with_an_error_line() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "trials 3\n").unwrap();
    fails(&["eval-doa", "--config", s(&bad)], "config-syntax");
    fs::write(&bad, "no_such_key = 1\n").unwrap();
    fails(&["eval-doa", "--config", s(&bad)], "setting");
    fails(&["gen-dataset", "--records", "3"], "usage");
    fails(&["eval-doa", "--array", "hexagon"], "usage");
    fails(&["eval-doa", "--task", "7"], "usage");
    fails(&["eval-doa", "--moe", "model", "--trials", "1"], "usage");
    fails(&["frobnicate"], "usage");
    fails(&["train", "--data", s(&dir.path().join("missing.bin")), "--out", s(&bad)], "io");

    let garbage = dir.path().join("garbage.ckpt");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    let out = moe(&["eval-doa", "--moe", "model", "--model", s(&garbage), "--trials", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error kind="));

    assert!(moe(&["--help"]).status.success());
}
