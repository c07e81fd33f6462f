#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_uttattn"))
}

pub fn run<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    bin().args(args).output().expect("binary runs")
}

/// Runs and insists on success, echoing stderr on failure.
pub fn ok<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Random sessions over `w0..w{vocab}` as corpus JSONL lines.
pub fn corpus_jsonl(sessions: usize, vocab: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sent = |lo: usize, hi: usize| -> String {
        let n = rng.gen_range(lo..=hi);
        (0..n)
            .map(|_| format!("w{}", rng.gen_range(0..vocab)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut out = String::new();
    for _ in 0..sessions {
        let context: Vec<String> = (0..3).map(|_| sent(2, 4)).collect();
        let rec = serde_json::json!({ "context": context, "response": sent(2, 4) });
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    out
}

/// Word vectors for `w0..w{vocab}`.
pub fn embeddings_text(vocab: usize, dim: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for i in 0..vocab {
        out.push_str(&format!("w{i}"));
        for _ in 0..dim {
            out.push_str(&format!(" {:.6}", rng.gen_range(-1.0..1.0)));
        }
        out.push('\n');
    }
    out
}

/// Flags for a model small enough to train in a test.
pub fn tiny_model() -> Vec<String> {
    ["--hidden", "16", "--emb-dim", "8", "--pad-len", "6", "--heads", "2", "--batch", "4"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

pub fn arg(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

pub fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}
