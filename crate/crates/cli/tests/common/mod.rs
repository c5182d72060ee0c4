#![allow(dead_code)]

use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

pub struct Run {
    pub code: i32,
    pub stderr: String,
}

/// Run the `nytune` binary in `cwd`.
pub fn nytune(cwd: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_nytune"))
        .args(args)
        .current_dir(cwd)
        .env_remove("NYTUNE_THREADS")
        .output()
        .expect("spawn nytune");
    Run { code: out.status.code().unwrap_or(-1), stderr: String::from_utf8_lossy(&out.stderr).into_owned() }
}

pub fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

pub fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

/// Manifest without its wall-clock section.
pub fn manifest_sans_timings(dir: &Path) -> Value {
    let mut m = json(&dir.join("manifest.json"));
    m.as_object_mut().unwrap().remove("timings");
    m
}

/// Every artifact listed in the manifest except the manifest itself.
pub fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let m = json(&dir.join("manifest.json"));
    m["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a.as_str().unwrap().to_string())
        .filter(|a| a != "manifest.json")
        .map(|a| {
            let bytes = fs::read(dir.join(&a)).unwrap();
            (a, bytes)
        })
        .collect()
}
