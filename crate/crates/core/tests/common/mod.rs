#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/pool-1k")
}

pub fn cookbook_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("cookbook")
}

pub fn curate(args: &[&str]) -> i32 {
    let mut argv = vec!["curate", "--log-level", "error"];
    argv.extend_from_slice(args);
    curate::cli::run(argv)
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Every file under `dir`, keyed by relative path.
pub fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Scores the bundled fixture with both caption sources into `work/scored`.
pub fn scored_fixture(work: &Path, threads: &str) -> PathBuf {
    let fx = fixture_dir();
    let once = work.join("scored-raw");
    let both = work.join("scored");
    assert_eq!(
        curate(&[
            "--threads", threads, "score", "--pool", s(&fx), "--out", s(&once),
            "--score-name", "dfn_raw", "--image-space", "image_dfn", "--text-space", "text_dfn_raw",
            "--embeddings", s(&fx),
        ]),
        0
    );
    assert_eq!(
        curate(&[
            "--threads", threads, "score", "--pool", s(&once), "--out", s(&both),
            "--score-name", "dfn_translated", "--image-space", "image_dfn",
            "--text-space", "text_dfn_translated", "--embeddings", s(&fx),
        ]),
        0
    );
    both
}
