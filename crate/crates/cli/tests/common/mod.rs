#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_embkit");

/// Runs the binary with `args`, a fixed seed environment and no logging.
pub fn embkit<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("EMBKIT_SEED")
        .env("RUST_LOG", "off")
        .output()
        .expect("spawning embkit")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

/// Runs and requires exit 0, printing stderr otherwise.
pub fn ok<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    let out = embkit(args);
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Every file under `dir` except run manifests, keyed by relative path.
pub fn tree_without_manifests(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    walk(dir, dir, &mut files);
    files
}

fn walk(root: &Path, dir: &Path, files: &mut BTreeMap<String, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            walk(root, &path, files);
        } else if !path.to_string_lossy().ends_with("manifest.json") {
            let rel = path
                .strip_prefix(root)
                .unwrap()
                .to_string_lossy()
                .into_owned();
            files.insert(rel, fs::read(&path).unwrap());
        }
    }
}

pub fn manifest_status(path: &Path) -> String {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["status"].as_str().unwrap().to_string()
}

/// Small synthetic suite and training data under `dir/tasks` and `dir/train`.
pub fn synth(dir: &Path, seed: u64, topics: usize, size: usize) {
    ok(&[
        "synth".to_string(),
        "--out".into(),
        dir.display().to_string(),
        "--seed".into(),
        seed.to_string(),
        "--topics".into(),
        topics.to_string(),
        "--size".into(),
        size.to_string(),
    ]);
}
