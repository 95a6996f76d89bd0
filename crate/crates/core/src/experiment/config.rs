// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment configuration and its flat `key = value` text form.
//!
//! ```text
//! # comments start with '#'
//! experiment = addk-geometry
//! seed = 0
//! sweep = 4,8,16
//! train.lr = 0.001
//! analysis.site = layer2.attn_out
//! ```
//!
//! Keys are dotted paths into the resolved configuration. Lists are
//! comma-separated and an empty value means "unset". The `experiment` key
//! selects the defaults every other key overrides; the seeds of the training
//! and probe stages always follow the top-level `seed`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::analysis::ProbeConfig;
use crate::error::{LabError, Result};
use crate::intervention::default_betas;
use crate::model::{ModelConfig, Site};
use crate::tasks::{Direction, TaskConfig};
use crate::train::TrainConfig;

/// The named experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    AddkClustering,
    AddkProbe,
    AddkGeometry,
    AddkSteer,
    AddkHelix,
    CircleGeometry,
    CircleSteer,
    CircleCwccw,
    RectGeometry,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::AddkClustering,
        Experiment::AddkProbe,
        Experiment::AddkGeometry,
        Experiment::AddkSteer,
        Experiment::AddkHelix,
        Experiment::CircleGeometry,
        Experiment::CircleSteer,
        Experiment::CircleCwccw,
        Experiment::RectGeometry,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::AddkClustering => "addk-clustering",
            Experiment::AddkProbe => "addk-probe",
            Experiment::AddkGeometry => "addk-geometry",
            Experiment::AddkSteer => "addk-steer",
            Experiment::AddkHelix => "addk-helix",
            Experiment::CircleGeometry => "circle-geometry",
            Experiment::CircleSteer => "circle-steer",
            Experiment::CircleCwccw => "circle-cwccw",
            Experiment::RectGeometry => "rect-geometry",
        }
    }

    /// Figure id accepted by `lglb repro`.
    pub fn figure_id(self) -> &'static str {
        match self {
            Experiment::AddkClustering => "fig5",
            Experiment::AddkProbe => "fig6",
            Experiment::AddkGeometry => "fig8",
            Experiment::AddkSteer => "fig9",
            Experiment::AddkHelix => "fig12",
            Experiment::CircleGeometry => "fig10",
            Experiment::CircleSteer => "fig11",
            Experiment::CircleCwccw => "fig13",
            Experiment::RectGeometry => "fig14",
        }
    }

    pub fn from_figure_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.figure_id() == id)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| LabError::Config(format!("unknown experiment {s:?}")))
    }
}

/// Settings of the analysis stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub site: Site,
    /// Unset: the family's task-vector position.
    pub position: Option<usize>,
    /// Sequences averaged per task vector.
    pub per_task: usize,
    /// Evaluation grid size: radii for circles, points per side for
    /// rectangles. 0 uses the training parameters.
    pub eval_grid: usize,
    /// Restrict task vectors to one direction (trajectories only).
    pub direction: Option<Direction>,
    pub pca_components: usize,
    pub betas: Vec<f64>,
    /// Sequences per task for probing and patching.
    pub probe_per_task: usize,
    pub probe: ProbeConfig,
    /// Held-out sequences for the post-training evaluation.
    pub eval_size: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            site: Site::attn_out(1),
            position: None,
            per_task: 200,
            eval_grid: 0,
            direction: None,
            pca_components: 2,
            betas: default_betas(),
            probe_per_task: 1000,
            probe: ProbeConfig::default(),
            eval_size: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    /// Task counts to run one after another; empty runs `task` as given.
    pub sweep: Vec<usize>,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub task: TaskConfig,
    pub train: TrainConfig,
    pub analysis: AnalysisConfig,
}

impl ExperimentConfig {
    /// Defaults of `experiment`.
    pub fn defaults(experiment: Experiment, seed: u64) -> Self {
        let out = PathBuf::from("runs").join(experiment.name());
        let addk = |k: usize| {
            let task = TaskConfig::addk(k);
            (task.model_config(), task, TrainConfig::addk(k, seed))
        };
        let trajectory = |task: TaskConfig| (task.model_config(), task, TrainConfig::trajectory(seed));
        let mut analysis = AnalysisConfig::default();
        let mut sweep = Vec::new();
        let (model, task, train) = match experiment {
            Experiment::AddkClustering | Experiment::AddkProbe => addk(2),
            Experiment::AddkGeometry => {
                sweep = vec![4, 8, 16];
                addk(4)
            }
            Experiment::AddkSteer => addk(4),
            Experiment::AddkHelix => {
                analysis.pca_components = 3;
                let task = TaskConfig::AddK {
                    vocab_size: 100,
                    n_examples: 4,
                    num_tasks: 32,
                    first_offset: 1,
                    offset_gap: 1,
                };
                (task.model_config(), task, TrainConfig::addk(32, seed))
            }
            Experiment::CircleGeometry | Experiment::CircleCwccw => {
                if experiment == Experiment::CircleGeometry {
                    sweep = vec![16, 32, 64];
                    analysis.direction = Some(Direction::Cw);
                }
                analysis.per_task = 100;
                analysis.eval_grid = 24;
                trajectory(TaskConfig::circle(32))
            }
            Experiment::CircleSteer => trajectory(TaskConfig::circle(32)),
            Experiment::RectGeometry => {
                analysis.per_task = 100;
                analysis.eval_grid = 8;
                analysis.direction = Some(Direction::Cw);
                trajectory(TaskConfig::rect(32))
            }
        };
        let mut cfg = Self {
            experiment,
            seed,
            sweep,
            out,
            model,
            task,
            train,
            analysis,
        };
        cfg.sync_seeds();
        cfg
    }

    fn sync_seeds(&mut self) {
        self.train.seed = self.seed;
        self.analysis.probe.seed = self.seed;
    }

    /// This configuration with `task.num_tasks` (and the batch size tied to
    /// it) set to `k`.
    pub fn with_num_tasks(&self, k: usize) -> Result<Self> {
        let mut c = self.clone();
        match &mut c.task {
            TaskConfig::AddK { num_tasks, .. } => {
                *num_tasks = k;
                let default_batch = |k| TrainConfig::addk(k, 0).batch_size;
                if c.train.batch_size == default_batch(self.task.num_tasks()) {
                    c.train.batch_size = default_batch(k);
                }
            }
            TaskConfig::Circle { num_tasks, .. } | TaskConfig::Rect { num_tasks, .. } => *num_tasks = k,
        }
        c.sweep.clear();
        c.validate()?;
        Ok(c)
    }

    /// One configuration per sweep entry (or `self` alone).
    pub fn expand(&self) -> Result<Vec<Self>> {
        if self.sweep.is_empty() {
            self.validate()?;
            return Ok(vec![self.clone()]);
        }
        self.sweep.iter().map(|&k| self.with_num_tasks(k)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.analysis.site.validate(&self.model)?;
        let needed = self.task.model_config();
        if needed.variant != self.model.variant {
            return Err(LabError::Config(format!(
                "model variant {:?} does not fit task {:?}",
                self.model.variant, needed.variant
            )));
        }
        if self.model.max_seq_len < needed.max_seq_len {
            return Err(LabError::Config(format!(
                "model.max_seq_len {} is shorter than the task's {}",
                self.model.max_seq_len, needed.max_seq_len
            )));
        }
        if self.analysis.per_task == 0 || self.analysis.probe_per_task < 2 || self.analysis.eval_size == 0 {
            return Err(LabError::Config("analysis sample counts must be positive".into()));
        }
        if self.analysis.pca_components == 0 {
            return Err(LabError::Config("analysis.pca_components must be positive".into()));
        }
        if self.analysis.betas.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(LabError::Config("analysis.betas must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Resolves `experiment` (from the overrides, else the base text, else
    /// `fallback`), then applies the base text followed by the overrides.
    pub fn resolve(
        fallback: Experiment,
        base: Option<&str>,
        seed: Option<u64>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let base_pairs = match base {
            Some(text) => parse_flat(text)?,
            None => Vec::new(),
        };
        let pick = |pairs: &[(String, String)]| pairs.iter().rev().find(|(k, _)| k == "experiment").map(|(_, v)| v.clone());
        let experiment = match pick(overrides).or_else(|| pick(&base_pairs)) {
            Some(name) => name.parse()?,
            None => fallback,
        };
        let defaults = Self::defaults(experiment, 0);
        let mut tree = serde_json::to_value(&defaults)?;
        for (k, v) in base_pairs.iter().chain(overrides) {
            if k == "experiment" {
                continue;
            }
            set_key(&mut tree, k, v)?;
        }
        let mut cfg: Self = serde_json::from_value(tree).map_err(|e| LabError::Config(e.to_string()))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.sync_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, seed: Option<u64>, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::resolve(Experiment::AddkGeometry, Some(&text), seed, overrides)
    }

    /// Flat text form; parsing it back gives the same configuration.
    pub fn to_flat(&self) -> Result<String> {
        let tree = serde_json::to_value(self)?;
        let mut pairs = Vec::new();
        flatten("", &tree, &mut pairs);
        let mut s = String::new();
        for (k, v) in pairs {
            if DERIVED_KEYS.contains(&k.as_str()) {
                continue;
            }
            s.push_str(&k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        Ok(s)
    }
}

/// Keys that always follow `seed`.
const DERIVED_KEYS: [&str; 2] = ["train.seed", "analysis.probe.seed"];

/// `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_flat(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let pair = parse_override(line).map_err(|_| LabError::Config(format!("line {}: expected key = value", i + 1)))?;
        out.push(pair);
    }
    Ok(out)
}

/// One `key=value` pair.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| LabError::Usage(format!("override {s:?} is not key=value")))?;
    let k = k.trim();
    if k.is_empty() || k.split('.').any(str::is_empty) {
        return Err(LabError::Usage(format!("override {s:?} has a malformed key")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(scalar_text).collect();
            out.push((prefix.to_string(), parts.join(",")));
        }
        _ => out.push((prefix.to_string(), scalar_text(v))),
    }
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn set_key(tree: &mut Value, key: &str, raw: &str) -> Result<()> {
    if DERIVED_KEYS.contains(&key) {
        return Err(LabError::Config(format!("{key} follows `seed`; set `seed` instead")));
    }
    let unknown = || LabError::Config(format!("unknown key {key:?}"));
    let mut node = tree;
    for part in key.split('.') {
        node = node.as_object_mut().and_then(|m: &mut Map<String, Value>| m.get_mut(part)).ok_or_else(unknown)?;
    }
    if node.is_object() {
        return Err(LabError::Config(format!("{key:?} is a section, not a value")));
    }
    *node = typed_value(node, raw).map_err(|msg| LabError::Config(format!("{key}: {msg}")))?;
    Ok(())
}

fn typed_value(current: &Value, raw: &str) -> std::result::Result<Value, String> {
    match current {
        Value::Array(items) => {
            if raw.is_empty() {
                return Ok(Value::Array(Vec::new()));
            }
            let proto = items.first().cloned().unwrap_or(Value::Null);
            raw.split(',').map(|p| typed_value(&proto, p.trim())).collect::<std::result::Result<_, _>>().map(Value::Array)
        }
        Value::Bool(_) => raw.parse().map(Value::Bool).map_err(|_| format!("{raw:?} is not a boolean")),
        Value::Number(n) => {
            if n.is_f64() {
                raw.parse::<f64>()
                    .ok()
                    .and_then(Number::from_f64)
                    .map(Value::Number)
                    .ok_or_else(|| format!("{raw:?} is not a number"))
            } else {
                raw.parse::<u64>().map(|u| Value::Number(u.into())).map_err(|_| format!("{raw:?} is not a non-negative integer"))
            }
        }
        Value::String(_) => Ok(Value::String(raw.to_string())),
        Value::Null => Ok(if raw.is_empty() {
            Value::Null
        } else if let Ok(u) = raw.parse::<u64>() {
            Value::Number(u.into())
        } else if let Some(n) = raw.parse::<f64>().ok().and_then(Number::from_f64) {
            Value::Number(n)
        } else {
            Value::String(raw.to_string())
        }),
        Value::Object(_) => Err("cannot assign to a section".into()),
    }
}
