// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lglb::experiment::{RunManifest, CACHE_ENV};

const TINY: &[&str] = &[
    "model.d_model=8",
    "model.d_mlp=16",
    "train.iterations=3",
    "train.batch_size=8",
    "train.eval_every=0",
    "analysis.per_task=5",
    "analysis.eval_size=16",
    "analysis.betas=0,0.5,1",
];

fn lglb(cache: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lglb"))
        .args(args)
        .env(CACHE_ENV, cache)
        .output()
        .expect("lglb runs")
}

fn with_tiny(mut args: Vec<&str>) -> Vec<&str> {
    for s in TINY {
        args.push("--set");
        args.push(s);
    }
    args
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn repro_writes_a_manifest_and_reruns_from_its_config() {
    let cache = tempfile::tempdir().unwrap();
    let work = tempfile::tempdir().unwrap();
    let first = work.path().join("first");
    let args = with_tiny(vec!["repro", "fig8", "--seed", "2", "--set", "sweep=2,3", "--out", first.to_str().unwrap()]);
    let out = lglb(cache.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&first);
    assert_eq!(m.seed, 2);
    assert_eq!(m.runs.len(), 2);
    assert!(m.runs.iter().all(|r| !r.from_cache));
    assert!(m.overrides.contains(&"sweep=2,3".to_string()));
    for rel in m.artifacts.keys() {
        assert!(first.join(rel).exists(), "{rel} listed but missing");
    }
    assert!(first.join("k2/pca.svg").exists() && first.join("k3/task_vectors.csv").exists());

    let second = work.path().join("second");
    let cfg = first.join("config.txt");
    let out = lglb(cache.path(), &["analyze", "--config", cfg.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let again = manifest(&second);
    assert!(again.runs.iter().all(|r| r.from_cache));
    let mut expected = m.artifacts.clone();
    let mut got = again.artifacts.clone();
    expected.remove("config.txt");
    got.remove("config.txt");
    assert_eq!(got, expected);
    let cfg = |dir: &Path| fs::read_to_string(dir.join("config.txt")).unwrap().replace(dir.to_str().unwrap(), "OUT");
    assert_eq!(cfg(&first), cfg(&second));
}

#[test]
fn train_and_patch_commands_run_on_tiny_models() {
    let cache = tempfile::tempdir().unwrap();
    let work = tempfile::tempdir().unwrap();
    let dir = work.path().join("patch");
    let out = lglb(cache.path(), &with_tiny(vec!["patch", "--out", dir.to_str().unwrap()]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.join("patch.csv")).unwrap();
    assert!(csv.starts_with("sample,t_norm,t_alt,diff_norm,diff_patched"));
    assert_eq!(csv.lines().count(), 1 + 5);

    let dir = work.path().join("train");
    let out = lglb(cache.path(), &with_tiny(vec!["train", "--out", dir.to_str().unwrap()]));
    assert!(out.status.success());
    let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("iteration,loss,lr,metric"));
    assert_eq!(metrics.lines().count(), 1 + 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("(cached)"));
}

#[test]
fn bad_invocations_report_usage_errors() {
    let cache = tempfile::tempdir().unwrap();
    let out = lglb(cache.path(), &["train", "--set", "model.depth=3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.depth"));
    assert_eq!(lglb(cache.path(), &["repro", "fig1"]).status.code(), Some(2));
    assert_eq!(lglb(cache.path(), &["train", "--set", "train.seed=4"]).status.code(), Some(2));
    let help = lglb(cache.path(), &[]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("fig14"));
}

#[test]
fn locked_output_directory_is_refused() {
    let cache = tempfile::tempdir().unwrap();
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(".lglb.lock"), "").unwrap();
    let out = lglb(cache.path(), &with_tiny(vec!["train", "--out", dir.path().to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
}
