#![allow(dead_code)]

use std::path::{Path, PathBuf};

use assert_cmd::Command;
use serde_json::{json, Value};

pub fn trajlift() -> Command {
    assert_cmd::cargo_bin_cmd!("trajlift")
}

pub fn object(id: u32, speed: Value, curvature: Value, x: f64, y: f64, yaw: f64) -> Value {
    json!({
        "id": id,
        "size": [4.5, 1.8, 1.5],
        "speed": speed,
        "curvature": curvature,
        "spawn": {"x": x, "y": y, "yaw": yaw},
    })
}

pub fn scenario(seed: u64, frames: usize, objects: Vec<Value>, noise: Value) -> Value {
    json!({
        "seed": seed,
        "frames": frames,
        "dt": 0.1,
        "objects": objects,
        "noise": noise,
    })
}

pub fn write_scenario(dir: &Path, scenario: &Value) -> PathBuf {
    let path = dir.join("scenario.json");
    std::fs::write(&path, serde_json::to_string_pretty(scenario).unwrap()).unwrap();
    path
}

/// Writes `scenario` and generates its sequence into `dir/seq`.
pub fn generate(dir: &Path, scenario: &Value) -> PathBuf {
    let config = write_scenario(dir, scenario);
    let seq = dir.join("seq");
    trajlift()
        .args(["generate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&seq)
        .assert()
        .success();
    seq
}

pub fn run(seq: &Path, out: &Path, extra: &[&str]) {
    trajlift()
        .args(["run", "--sequence"])
        .arg(seq)
        .arg("--out")
        .arg(out)
        .args(extra)
        .assert()
        .success();
}

pub fn read_value(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Every file under `root`, relative to it, sorted.
pub fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

pub fn same_tree(a: &Path, b: &Path) -> bool {
    let names = files(a);
    names == files(b)
        && names
            .iter()
            .all(|n| std::fs::read(a.join(n)).unwrap() == std::fs::read(b.join(n)).unwrap())
}
