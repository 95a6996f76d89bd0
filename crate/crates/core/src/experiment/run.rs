// SPDX-License-Identifier: MIT OR Apache-2.0

//! Runs an experiment into an output directory.
//!
//! Layout (one `k<K>/` subdirectory per sweep entry when sweeping):
//!
//! ```text
//! config.txt       resolved configuration, flat text
//! manifest.json    config, overrides, version, seeds, timing, checksums
//! summary.json     headline numbers of every run
//! checkpoint.lglb  trained model
//! metrics.csv      iteration,loss,lr,metric
//! evaluation.json  held-out accuracy or MSE
//! *.csv, *.svg     experiment-specific data and plots
//! ```
//!
//! Everything except `manifest.json` is a deterministic function of the
//! configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::cache::{sha256_hex, write_atomic, Cache, Trained};
use super::config::{Experiment, ExperimentConfig};
use super::plot::{self, Heatmap, LinePlot, Scatter};
use super::stages::{self, Geometry, PROBE_SITES};
use crate::analysis::{ProbeReport, ProbeTarget, TaskVector};
use crate::error::{LabError, Result};
use crate::intervention::{SteerMetrics, SteerReport};
use crate::tasks::{Direction, TaskParam};
use crate::train::{save_checkpoint, write_metric_log};

/// How far a run goes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Training and held-out evaluation only.
    Train,
    /// Training followed by the experiment's analysis.
    Analyze,
    /// Training followed by activation patching (add-k only).
    Patch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub dir: String,
    pub num_tasks: usize,
    pub cache_key: String,
    pub from_cache: bool,
}

/// Everything needed to repeat a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: Experiment,
    pub stage: Stage,
    /// Resolved configuration in flat text form.
    pub config: String,
    /// `--set` overrides as given on the command line.
    pub overrides: Vec<String>,
    pub version: String,
    pub seed: u64,
    pub runs: Vec<ManifestRun>,
    pub wall_clock_seconds: f64,
    /// SHA-256 of every artifact, keyed by path relative to the run
    /// directory.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: Value,
    pub manifest: RunManifest,
}

pub const LOCK_FILE: &str = ".lglb.lock";

struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(LabError::Locked { path }),
            Err(e) => Err(LabError::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    write_atomic(path, bytes.as_ref())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

pub fn run_experiment(cfg: &ExperimentConfig, stage: Stage, overrides: &[String], cache: &Cache) -> Result<RunOutcome> {
    let start = Instant::now();
    let runs = cfg.expand()?;
    let root = cfg.out.clone();
    fs::create_dir_all(&root).map_err(|e| LabError::io(&root, e))?;
    let lock = DirLock::acquire(&root)?;

    write(&root.join("config.txt"), cfg.to_flat()?)?;
    let mut manifest_runs = Vec::new();
    let mut summaries = Vec::new();
    for run in &runs {
        let k = run.task.num_tasks();
        let (dir, rel) = if cfg.sweep.is_empty() {
            (root.clone(), ".".to_string())
        } else {
            (root.join(format!("k{k}")), format!("k{k}"))
        };
        fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
        let trained = cache.train(&run.model, &run.task, &run.train, run.seed)?;
        let mut summary = train_artifacts(run, &trained, &dir)?;
        match stage {
            Stage::Train => {}
            Stage::Analyze => {
                summary["analysis"] = analyze(run, &trained, &dir)?;
            }
            Stage::Patch => {
                summary["patch"] = patch(run, &trained, &dir)?;
            }
        }
        manifest_runs.push(ManifestRun {
            dir: rel,
            num_tasks: k,
            cache_key: trained.key.clone(),
            from_cache: trained.from_cache,
        });
        summaries.push(summary);
    }
    let summary = json!({
        "experiment": cfg.experiment,
        "stage": stage,
        "seed": cfg.seed,
        "runs": summaries,
    });
    write_json(&root.join("summary.json"), &summary)?;

    let manifest = RunManifest {
        experiment: cfg.experiment,
        stage,
        config: cfg.to_flat()?,
        overrides: overrides.to_vec(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        runs: manifest_runs,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        artifacts: checksums(&root)?,
    };
    write_json(&root.join("manifest.json"), &manifest)?;
    drop(lock);
    Ok(RunOutcome { dir: root, summary, manifest })
}

/// SHA-256 of every file under `root` except the manifest and the lock.
pub fn checksums(root: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| LabError::io(&dir, e))? {
            let path = entry.map_err(|e| LabError::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            if rel == "manifest.json" || rel == LOCK_FILE || rel.contains(".tmp") {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| LabError::io(&path, e))?;
            out.insert(rel, sha256_hex(&bytes));
        }
    }
    Ok(out)
}

fn train_artifacts(run: &ExperimentConfig, trained: &Trained, dir: &Path) -> Result<Value> {
    save_checkpoint(&trained.checkpoint, dir.join("checkpoint.lglb"))?;
    let mut log = Vec::new();
    write_metric_log(&trained.metrics, &mut log).map_err(|e| LabError::io(dir.join("metrics.csv"), e))?;
    write(&dir.join("metrics.csv"), log)?;
    let loss: Vec<[f64; 2]> = trained.metrics.iter().map(|m| [m.iteration as f64, m.loss]).collect();
    write(
        &dir.join("loss.svg"),
        plot::line(&LinePlot {
            title: format!("{} training loss", run.task.name()),
            xlabel: "iteration".into(),
            ylabel: "loss".into(),
            series: vec![("train".into(), loss)],
        })?,
    )?;
    let evaluation = stages::held_out(&trained.checkpoint, &run.analysis, run.seed)?;
    write_json(&dir.join("evaluation.json"), &evaluation)?;
    Ok(json!({
        "num_tasks": run.task.num_tasks(),
        "task_params": trained.checkpoint.family.task_params(),
        "final_loss": trained.metrics.last().map(|m| m.loss),
        "evaluation": evaluation,
    }))
}

fn param_columns(p: &TaskParam) -> (String, String) {
    match *p {
        TaskParam::Offset(k) => (k.to_string(), String::new()),
        TaskParam::Radius(r) => (r.to_string(), String::new()),
        TaskParam::Sides { a, b } => (a.to_string(), b.to_string()),
    }
}

fn direction_text(d: Option<Direction>) -> &'static str {
    d.map_or("", Direction::label)
}

fn write_vectors(dir: &Path, vectors: &[TaskVector], projections: &[Vec<f64>]) -> Result<()> {
    let n_pc = projections.first().map_or(0, Vec::len);
    let mut s = String::from("index,param_1,param_2,direction");
    for c in 0..n_pc {
        let _ = write!(s, ",pc{}", c + 1);
    }
    s.push('\n');
    for (i, (v, p)) in vectors.iter().zip(projections).enumerate() {
        let (p1, p2) = param_columns(&v.param);
        let _ = write!(s, "{i},{p1},{p2},{}", direction_text(v.direction));
        for x in p {
            let _ = write!(s, ",{x}");
        }
        s.push('\n');
    }
    write(&dir.join("task_vectors.csv"), s)?;

    let mut raw = String::from("index,site,position,n_averaged,values\n");
    for (i, v) in vectors.iter().enumerate() {
        let values: Vec<String> = v.vector.iter().map(f64::to_string).collect();
        let _ = writeln!(raw, "{i},{},{},{},{}", v.site, v.position, v.n_averaged, values.join(" "));
    }
    write(&dir.join("vectors.csv"), raw)
}

fn write_pca(dir: &Path, g: &Geometry) -> Result<()> {
    let mut s = String::from("component,eigenvalue,variance_fraction,cumulative\n");
    for (i, (e, f)) in g.pca.eigenvalues.iter().zip(&g.pca.variance_fractions).enumerate() {
        let _ = writeln!(s, "{},{e},{f},{}", i + 1, g.pca.cumulative(i + 1));
    }
    write(&dir.join("pca.csv"), s)
}

fn geometry_plots(dir: &Path, title: &str, g: &Geometry, groups: Vec<usize>, names: Vec<String>) -> Result<()> {
    let values: Vec<f64> = g.vectors.iter().map(|v| v.param.components()[0]).collect();
    let pc = |c: usize| format!("PC{} ({:.2}%)", c + 1, 100.0 * g.pca.variance_fractions[c]);
    let n = g.pca.n_components;
    if n >= 2 {
        let scatter = Scatter {
            title: title.to_string(),
            xlabel: pc(0),
            ylabel: pc(1),
            points: g.pca.projections.iter().map(|p| [p[0], p[1]]).collect(),
            values: values.clone(),
            groups: groups.clone(),
            group_names: names.clone(),
        };
        write(&dir.join("pca.svg"), plot::scatter2d(&scatter)?)?;
        if n >= 3 {
            let pts: Vec<[f64; 3]> = g.pca.projections.iter().map(|p| [p[0], p[1], p[2]]).collect();
            let scatter3 = Scatter {
                title: format!("{title} (3 PCs)"),
                xlabel: "projected".into(),
                ylabel: "projected".into(),
                ..scatter
            };
            write(&dir.join("pca3d.svg"), plot::scatter3d_projected(&scatter3, &pts)?)?;
        }
    } else {
        let scatter = Scatter {
            title: title.to_string(),
            xlabel: "parameter".into(),
            ylabel: pc(0),
            points: g.pca.projections.iter().zip(&values).map(|(p, &v)| [v, p[0]]).collect(),
            values,
            groups,
            group_names: names,
        };
        write(&dir.join("pca.svg"), plot::scatter2d(&scatter)?)?;
    }
    Ok(())
}

fn geometry_summary(g: &Geometry) -> Value {
    json!({
        "n_vectors": g.vectors.len(),
        "variance_fractions": g.pca.variance_fractions.iter().take(g.pca.n_components.max(3)).collect::<Vec<_>>(),
        "pc1": g.pca.cumulative(1),
        "two_pc": g.pca.cumulative(2),
        "three_pc": g.pca.cumulative(3),
        "spearman_rho": g.ordering.as_ref().map(|o| o.rho),
        "order_preserved": g.ordering.as_ref().map(|o| o.preserved),
        "chain_preserved": g.chain.as_ref().map(|c| c.preserved),
    })
}

fn write_probes(dir: &Path, reports: &[ProbeReport]) -> Result<Value> {
    let mut s = String::from("site,target,n_classes,n_train,n_test,train_accuracy,test_accuracy,initial_loss,final_loss\n");
    let target_name = |t: ProbeTarget| match t {
        ProbeTarget::TaskId => "task_id",
        ProbeTarget::FinalOutput => "final_output",
    };
    for r in reports {
        let site = r.site.map(|s| s.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{site},{},{},{},{},{},{},{},{}",
            target_name(r.target),
            r.n_classes,
            r.n_train,
            r.n_test,
            r.train_accuracy,
            r.test_accuracy,
            r.initial_loss,
            r.final_loss
        );
    }
    write(&dir.join("probes.csv"), s)?;
    let series = [ProbeTarget::TaskId, ProbeTarget::FinalOutput]
        .into_iter()
        .map(|t| {
            let pts = PROBE_SITES
                .iter()
                .enumerate()
                .filter_map(|(i, site)| {
                    reports
                        .iter()
                        .find(|r| r.target == t && r.site == Some(*site))
                        .map(|r| [i as f64, r.test_accuracy])
                })
                .collect();
            (target_name(t).to_string(), pts)
        })
        .collect();
    write(
        &dir.join("probes.svg"),
        plot::line(&LinePlot {
            title: "probe test accuracy: layer1.mlp_out, layer2.attn_out, layer2.mlp_hidden, layer2.mlp_out".into(),
            xlabel: "site".into(),
            ylabel: "test accuracy".into(),
            series,
        })?,
    )?;
    let mut by_target = serde_json::Map::new();
    for r in reports {
        let entry = by_target.entry(target_name(r.target)).or_insert_with(|| json!({}));
        entry[r.site.map(|s| s.to_string()).unwrap_or_default()] = json!(r.test_accuracy);
    }
    Ok(Value::Object(by_target))
}

fn write_steer(dir: &Path, name: &str, report: &SteerReport) -> Result<Value> {
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(|e| LabError::io(dir.join(name), e))?;
    write(&dir.join(format!("{name}.csv")), csv)?;
    let betas: Vec<f64> = report.rows.iter().map(|r| r.beta).collect();
    let title = format!("steering {:?} -> {:?}", report.original, report.opposite);
    let is_token = matches!(report.rows.first().map(|r| &r.metrics), Some(SteerMetrics::Token { .. }));
    let series_of = |f: &dyn Fn(&SteerMetrics) -> [f64; 3]| -> Vec<(String, Vec<[f64; 2]>)> {
        ["original", "opposite", "target"]
            .iter()
            .enumerate()
            .map(|(i, n)| {
                (n.to_string(), report.rows.iter().map(|r| [r.beta, f(&r.metrics)[i]]).collect())
            })
            .collect()
    };
    if is_token {
        for (metric, pick) in [("top1", 0usize), ("top3", 1)] {
            let series = series_of(&|m| match m {
                SteerMetrics::Token {
                    original,
                    opposite,
                    target,
                    ..
                } => {
                    let g = |a: &crate::intervention::Accuracy| if pick == 0 { a.top1 } else { a.top3 };
                    [g(original), g(opposite), g(target)]
                }
                SteerMetrics::Radius { .. } => [f64::NAN; 3],
            });
            write(
                &dir.join(format!("{name}_{metric}.svg")),
                plot::line(&LinePlot {
                    title: format!("{title}, {metric}"),
                    xlabel: "beta".into(),
                    ylabel: "accuracy".into(),
                    series,
                })?,
            )?;
        }
    } else {
        let series = series_of(&|m| match m {
            SteerMetrics::Radius {
                mse_original,
                mse_opposite,
                mse_target,
                ..
            } => [*mse_original, *mse_opposite, *mse_target],
            SteerMetrics::Token { .. } => [f64::NAN; 3],
        });
        write(
            &dir.join(format!("{name}_mse.svg")),
            plot::line(&LinePlot {
                title,
                xlabel: "beta".into(),
                ylabel: "radius MSE".into(),
                series,
            })?,
        )?;
    }
    Ok(json!({ "betas": betas, "rows": report.rows }))
}

fn analyze(run: &ExperimentConfig, trained: &Trained, dir: &Path) -> Result<Value> {
    let ckpt = &trained.checkpoint;
    let a = &run.analysis;
    let seed = run.seed;
    match run.experiment {
        Experiment::AddkClustering => {
            let c = stages::clustering(ckpt, a, seed)?;
            let mut s = String::from("row,label");
            for j in 0..c.labels.len() {
                let _ = write!(s, ",c{j}");
            }
            s.push('\n');
            for (i, row) in c.cosines.iter().enumerate() {
                let _ = write!(s, "{i},{}", c.labels[i]);
                for v in row {
                    let _ = write!(s, ",{v}");
                }
                s.push('\n');
            }
            write(&dir.join("cosine.csv"), s)?;
            let stride = c.labels.len().div_ceil(100);
            let shown: Vec<Vec<f64>> = c.cosines.iter().step_by(stride).map(|r| r.iter().step_by(stride).copied().collect()).collect();
            write(
                &dir.join("cosine.svg"),
                plot::heatmap(&Heatmap {
                    title: format!("cosine similarity at {} (every {stride} sequence)", a.site),
                    matrix: shown,
                    label: "cosine".into(),
                })?,
            )?;
            Ok(json!({
                "mean_intra": c.stats.mean_intra,
                "mean_inter": c.stats.mean_inter,
                "gap": c.stats.gap(),
                "separated_fraction": c.stats.separated_fraction,
            }))
        }
        Experiment::AddkProbe => write_probes(dir, &stages::probes(ckpt, a, seed)?),
        Experiment::AddkGeometry | Experiment::AddkHelix | Experiment::CircleGeometry | Experiment::RectGeometry => {
            let g = stages::geometry(ckpt, a, seed)?;
            write_vectors(dir, &g.vectors, &g.pca.projections)?;
            write_pca(dir, &g)?;
            let title = format!("{} task vectors, K = {}", run.task.name(), run.task.num_tasks());
            geometry_plots(dir, &title, &g, Vec::new(), Vec::new())?;
            Ok(geometry_summary(&g))
        }
        Experiment::CircleCwccw => {
            let s = stages::separation(ckpt, a, seed)?;
            write_vectors(dir, &s.joint.vectors, &s.joint.pca.projections)?;
            write_pca(dir, &s.joint)?;
            let groups = s.joint.vectors.iter().map(|v| usize::from(v.direction == Some(Direction::Ccw))).collect();
            geometry_plots(dir, "circle task vectors, CW and CCW", &s.joint, groups, vec!["CW".into(), "CCW".into()])?;
            let mut summary = geometry_summary(&s.joint);
            summary["cw_two_pc"] = json!(s.cw_two_pc);
            summary["ccw_two_pc"] = json!(s.ccw_two_pc);
            summary["direction_accuracy"] = json!(s.direction_accuracy);
            Ok(summary)
        }
        Experiment::AddkSteer | Experiment::CircleSteer => {
            let st = stages::steering(ckpt, a, seed)?;
            Ok(json!({
                "forward": write_steer(dir, "steer_forward", &st.reports[0])?,
                "backward": write_steer(dir, "steer_backward", &st.reports[1])?,
            }))
        }
    }
}

fn patch(run: &ExperimentConfig, trained: &Trained, dir: &Path) -> Result<Value> {
    let rep = stages::patching(&trained.checkpoint, &run.analysis, run.seed)?;
    let mut csv = Vec::new();
    rep.write_csv(&mut csv).map_err(|e| LabError::io(dir.join("patch.csv"), e))?;
    write(&dir.join("patch.csv"), csv)?;
    Ok(json!({
        "site": run.analysis.site,
        "delta_norm": rep.delta_norm,
        "delta_alt_to_norm": rep.delta_alt_to_norm,
        "delta_bar": rep.delta_bar,
        "mean_rr_norm_before": rep.mean_rr_norm_before,
        "mean_rr_alt_before": rep.mean_rr_alt_before,
        "mean_rr_norm_after": rep.mean_rr_norm_after,
        "mean_rr_alt_after": rep.mean_rr_alt_after,
        "flip_rate": rep.flip_rate,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::DataMode;

    fn tiny(experiment: Experiment, out: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults(experiment, 1);
        c.out = out.to_path_buf();
        c.model.d_model = 8;
        c.model.d_mlp = 16;
        c.train.iterations = 4;
        c.train.batch_size = 8;
        c.train.eval_every = 0;
        if let DataMode::Fixed { size } = &mut c.train.data {
            *size = 32;
        }
        c.analysis.per_task = 6;
        c.analysis.probe_per_task = 30;
        c.analysis.probe.steps = 5;
        c.analysis.eval_size = 16;
        c.analysis.betas = vec![0.0, 0.5, 1.0];
        if c.analysis.eval_grid > 0 {
            c.analysis.eval_grid = 3;
        }
        if !c.sweep.is_empty() {
            c.sweep.truncate(2);
        }
        c
    }

    #[test]
    fn every_experiment_runs_and_reruns_identically() {
        let cache_dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(cache_dir.path());
        for e in Experiment::ALL {
            let out = tempfile::tempdir().unwrap();
            let cfg = tiny(e, out.path());
            let first = run_experiment(&cfg, Stage::Analyze, &["train.lr=0.001".into()], &cache).unwrap();
            assert!(out.path().join("summary.json").exists(), "{e}");
            assert!(!out.path().join(LOCK_FILE).exists());
            assert_eq!(first.manifest.overrides, vec!["train.lr=0.001".to_string()]);
            let again = run_experiment(&cfg, Stage::Analyze, &[], &cache).unwrap();
            assert_eq!(first.manifest.artifacts, again.manifest.artifacts, "{e}");
            assert!(again.manifest.runs.iter().all(|r| r.from_cache));
        }
    }

    #[test]
    fn geometry_summary_has_variance_and_steer_csv_has_rows() {
        let cache_dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(cache_dir.path());
        let out = tempfile::tempdir().unwrap();
        let mut cfg = tiny(Experiment::AddkGeometry, out.path());
        cfg.sweep.clear();
        let r = run_experiment(&cfg, Stage::Analyze, &[], &cache).unwrap();
        assert!(r.summary["runs"][0]["analysis"]["pc1"].is_number());

        let out = tempfile::tempdir().unwrap();
        let cfg = tiny(Experiment::AddkSteer, out.path());
        run_experiment(&cfg, Stage::Analyze, &[], &cache).unwrap();
        let csv = fs::read_to_string(out.path().join("steer_forward.csv")).unwrap();
        // 3 betas x 2 metrics x 3 references.
        assert_eq!(csv.lines().count(), 1 + 3 * 2 * 3);
    }

    #[test]
    fn locked_directory_is_refused() {
        let out = tempfile::tempdir().unwrap();
        fs::write(out.path().join(LOCK_FILE), "").unwrap();
        let cfg = tiny(Experiment::AddkSteer, out.path());
        let cache = Cache::new(out.path().join("cache"));
        assert!(matches!(run_experiment(&cfg, Stage::Train, &[], &cache), Err(LabError::Locked { .. })));
    }

    #[test]
    fn patch_stage_reports_delta_bar() {
        let out = tempfile::tempdir().unwrap();
        let cfg = tiny(Experiment::AddkSteer, out.path());
        let cache = Cache::new(out.path().join("cache"));
        let r = run_experiment(&cfg, Stage::Patch, &[], &cache).unwrap();
        assert!(r.summary["runs"][0]["patch"]["delta_norm"].is_number());
        assert!(out.path().join("patch.csv").exists());
    }
}
