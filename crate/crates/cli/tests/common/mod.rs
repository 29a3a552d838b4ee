#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn tol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tol"))
        .args(args)
        .output()
        .expect("spawn tol")
}

pub const GOLDEN_FILES: [&str; 3] = ["lens1.png", "lens2.png", "description.json"];

/// Region sources for the golden `tol read` runs, by flag and fixture file.
pub const GOLDEN_SOURCES: [(&str, &str); 2] = [
    ("--hierarchy", "hierarchy.json"),
    ("--detections", "detections.json"),
];

pub const GOLDEN_POINT: &str = "150,215";

/// Runs the golden `tol read` into `out`; golden files for it live under
/// `fixtures/golden/<source stem>`.
pub fn read_golden_case(flag: &str, file: &str, out: &Path) -> Result<(), String> {
    let fx = fixtures();
    let args = [
        "read",
        "--image",
        fx.join("screenshot.png").to_str().unwrap(),
        flag,
        fx.join(file).to_str().unwrap(),
        "--point",
        GOLDEN_POINT,
        "--backend",
        "mock",
        "--out-dir",
        out.to_str().unwrap(),
    ]
    .map(String::from);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let res = tol(&args);
    if res.status.success() {
        Ok(())
    } else {
        Err(format!(
            "tol read {flag} exited {:?}: {}",
            res.status.code(),
            String::from_utf8_lossy(&res.stderr)
        ))
    }
}

pub fn golden_dir(file: &str) -> PathBuf {
    fixtures()
        .join("golden")
        .join(file.trim_end_matches(".json"))
}

/// First golden file whose bytes differ from `out`, if any.
pub fn golden_mismatch(file: &str, out: &Path) -> Option<String> {
    let golden = golden_dir(file);
    GOLDEN_FILES
        .into_iter()
        .find(|name| std::fs::read(out.join(name)).ok() != std::fs::read(golden.join(name)).ok())
        .map(|name| format!("{}/{name}", golden.file_name().unwrap().to_string_lossy()))
}
