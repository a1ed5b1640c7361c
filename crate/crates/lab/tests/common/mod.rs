#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bdpo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bdpo"))
        .args(args)
        .output()
        .expect("spawn bdpo")
}

pub fn code(args: &[&str]) -> i32 {
    bdpo(args).status.code().expect("exit code")
}

pub fn ok(args: &[&str]) {
    let out = bdpo(args);
    assert!(
        out.status.success(),
        "bdpo {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs gen-data, pretrain and analyze into `dir` and returns the directory.
pub fn pipeline(dir: &Path, seed: u64, n_per_label: usize) -> PathBuf {
    let seed = seed.to_string();
    let n = n_per_label.to_string();
    ok(&[
        "gen-data",
        "--out-dir",
        s(dir),
        "--seed",
        &seed,
        "--n-safe",
        &n,
        "--n-unsafe",
        &n,
    ]);
    ok(&[
        "pretrain",
        "--dataset",
        s(&dir.join("dataset.jsonl")),
        "--init-params",
        s(&dir.join("init.params")),
        "--out-dir",
        s(dir),
        "--epochs",
        "5",
        "--seed",
        &seed,
    ]);
    ok(&[
        "analyze",
        "--dataset",
        s(&dir.join("dataset.jsonl")),
        "--ref-params",
        s(&dir.join("ref.params")),
        "--out-dir",
        s(dir),
    ]);
    dir.to_path_buf()
}

pub fn train_args<'a>(dir: &'a Path, out: &'a str, loss: &'a str) -> Vec<String> {
    vec![
        "train".into(),
        "--dataset".into(),
        s(&dir.join("annotated.jsonl")).into(),
        "--init-params".into(),
        s(&dir.join("ref.params")).into(),
        "--out-dir".into(),
        s(&dir.join(out)).into(),
        "--loss".into(),
        loss.into(),
    ]
}

pub fn run_owned(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    bdpo(&refs)
}
