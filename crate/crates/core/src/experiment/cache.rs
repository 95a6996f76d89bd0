// SPDX-License-Identifier: MIT OR Apache-2.0

//! Checkpoint cache keyed by a hash of everything that determines training.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::model::ModelConfig;
use crate::tasks::TaskConfig;
use crate::train::{self, load_checkpoint, save_checkpoint, Checkpoint, MetricRow, TrainConfig};

/// Environment variable naming the cache directory.
pub const CACHE_ENV: &str = "LGLB_CACHE_DIR";

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model: &'a ModelConfig,
    task: &'a TaskConfig,
    train: &'a TrainConfig,
    seed: u64,
}

/// Hex key of a training setup.
pub fn cache_key(model: &ModelConfig, task: &TaskConfig, train: &TrainConfig, seed: u64) -> Result<String> {
    let json = serde_json::to_vec(&KeyMaterial {
        model,
        task,
        train,
        seed,
    })?;
    Ok(sha256_hex(&json))
}

/// A trained model and its training log.
#[derive(Clone, Debug)]
pub struct Trained {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricRow>,
    pub key: String,
    pub from_cache: bool,
    /// Wall-clock seconds the training run took when it was produced.
    pub train_seconds: f64,
}

#[derive(Serialize, serde::Deserialize)]
struct RunLog {
    metrics: Vec<MetricRow>,
    train_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct Cache {
    pub dir: PathBuf,
}

fn key_locks() -> &'static Mutex<HashMap<String, Arc<Mutex<()>>>> {
    static LOCKS: OnceLock<Mutex<HashMap<String, Arc<Mutex<()>>>>> = OnceLock::new();
    LOCKS.get_or_init(Default::default)
}

impl Cache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// `$LGLB_CACHE_DIR`, else `target/lglb-cache` under the working
    /// directory.
    pub fn from_env() -> Self {
        match std::env::var_os(CACHE_ENV) {
            Some(d) if !d.is_empty() => Self::new(d),
            _ => Self::new("target/lglb-cache"),
        }
    }

    fn paths(&self, key: &str) -> (PathBuf, PathBuf) {
        (self.dir.join(format!("{key}.ckpt")), self.dir.join(format!("{key}.log.json")))
    }

    /// Loads the cached checkpoint for this setup or trains and stores it.
    ///
    /// Concurrent callers in one process wait for a single training run.
    pub fn train(&self, model: &ModelConfig, task: &TaskConfig, train_cfg: &TrainConfig, seed: u64) -> Result<Trained> {
        let key = cache_key(model, task, train_cfg, seed)?;
        let lock = key_locks()
            .lock()
            .expect("cache lock table")
            .entry(key.clone())
            .or_default()
            .clone();
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let family = task.build(seed)?;
        let (ckpt_path, metrics_path) = self.paths(&key);
        if ckpt_path.exists() && metrics_path.exists() {
            let checkpoint = load_checkpoint(&ckpt_path)?;
            if checkpoint.model_config != *model || checkpoint.train_config != *train_cfg || checkpoint.family != family {
                return Err(LabError::CacheMismatch { path: ckpt_path });
            }
            let text = fs::read(&metrics_path).map_err(|e| LabError::io(&metrics_path, e))?;
            let log: RunLog = serde_json::from_slice(&text)?;
            return Ok(Trained {
                checkpoint,
                metrics: log.metrics,
                key,
                from_cache: true,
                train_seconds: log.train_seconds,
            });
        }
        let start = std::time::Instant::now();
        let (checkpoint, metrics) = train::train(model.clone(), family, train_cfg.clone())?;
        let log = RunLog {
            metrics,
            train_seconds: start.elapsed().as_secs_f64(),
        };
        fs::create_dir_all(&self.dir).map_err(|e| LabError::io(&self.dir, e))?;
        save_checkpoint(&checkpoint, &ckpt_path)?;
        write_atomic(&metrics_path, &serde_json::to_vec(&log)?)?;
        Ok(Trained {
            checkpoint,
            metrics: log.metrics,
            key,
            from_cache: false,
            train_seconds: log.train_seconds,
        })
    }
}

/// Writes through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp{}",
        path.extension().and_then(|e| e.to_str()).unwrap_or(""),
        std::process::id()
    ));
    fs::write(&tmp, bytes).map_err(|e| LabError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| LabError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::DataMode;

    fn tiny() -> (ModelConfig, TaskConfig, TrainConfig) {
        let task = TaskConfig::addk(2);
        let mut model = task.model_config();
        model.d_model = 8;
        model.d_mlp = 16;
        let mut train = TrainConfig::addk(2, 5);
        train.iterations = 3;
        train.batch_size = 4;
        train.eval_every = 0;
        train.data = DataMode::Fixed { size: 16 };
        (model, task, train)
    }

    #[test]
    fn sha256_reference() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn second_call_hits_the_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(dir.path());
        let (m, t, tr) = tiny();
        let a = cache.train(&m, &t, &tr, 5).unwrap();
        let b = cache.train(&m, &t, &tr, 5).unwrap();
        assert!(!a.from_cache && b.from_cache);
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.metrics, b.metrics);
        let mut other = tr.clone();
        other.iterations = 4;
        assert_ne!(cache_key(&m, &t, &other, 5).unwrap(), a.key);
    }

    #[test]
    fn foreign_entry_is_a_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(dir.path());
        let (m, t, tr) = tiny();
        let a = cache.train(&m, &t, &tr, 5).unwrap();
        let mut other = tr.clone();
        other.iterations = 2;
        let key = cache_key(&m, &t, &other, 5).unwrap();
        fs::copy(dir.path().join(format!("{}.ckpt", a.key)), dir.path().join(format!("{key}.ckpt"))).unwrap();
        fs::copy(
            dir.path().join(format!("{}.log.json", a.key)),
            dir.path().join(format!("{key}.log.json")),
        )
        .unwrap();
        assert!(matches!(cache.train(&m, &t, &other, 5), Err(LabError::CacheMismatch { .. })));
    }
}
