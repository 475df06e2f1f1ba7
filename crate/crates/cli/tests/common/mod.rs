#![allow(dead_code)]

use std::path::Path;
use std::process::Command;

use serde_json::Value;

pub struct Run {
    pub success: bool,
    pub code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", self.stdout))
    }

    pub fn error_json(&self) -> Value {
        let line = self.stderr.lines().last().unwrap_or_default();
        serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not a JSON record ({e}): {}", self.stderr))
    }
}

pub fn switchgp<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_switchgp"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn switchgp");
    Run {
        success: out.status.success(),
        code: out.status.code(),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Runs a command that must succeed and returns its run document.
pub fn switchgp_ok<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Value {
    let run = switchgp(args);
    assert!(run.success, "switchgp failed: {}", run.stderr);
    run.json()
}

pub fn p(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

/// Simulates a small three-state dataset and trains a model on it; returns (data dir, model path).
pub fn simulate_and_train(root: &Path, seed: u64, length: usize, train: usize, test: usize) -> (String, String) {
    let data = root.join("data");
    let model = root.join("model.txt");
    switchgp_ok(&[
        "simulate",
        "--seed",
        &seed.to_string(),
        "--states",
        "3",
        "--length",
        &length.to_string(),
        "--train-subjects",
        &train.to_string(),
        "--test-subjects",
        &test.to_string(),
        "--out",
        &p(&data),
    ]);
    switchgp_ok(&["train", "--data-dir", &p(&data), "--model", &p(&model)]);
    (p(&data), p(&model))
}
