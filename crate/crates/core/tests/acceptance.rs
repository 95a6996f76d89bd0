// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance suite. One test per criterion; each prints a single
//! `PASS criterion N` or `FAIL criterion N` line.
//!
//! Training criteria run up to five seeds and pass when four of them pass;
//! they stop early once the verdict is settled. Checkpoints are cached under
//! `$LGLB_CACHE_DIR` (default `target/lglb-cache`), so a second run only
//! repeats the analysis.

mod common;

use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use lglb::analysis::ProbeTarget;
use lglb::experiment::stages;
use lglb::experiment::{Cache, Experiment, ExperimentConfig, Trained};
use lglb::intervention::SteerMetrics;
use lglb::model::Site;
use lglb::train::Evaluation;

const SEEDS: u64 = 5;
const REQUIRED: usize = 4;

static SERIAL: Mutex<()> = Mutex::new(());

fn say(line: &str) {
    let mut out = std::io::stdout();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn verdict(n: u32, ok: bool, detail: &str) {
    say(&format!("{} criterion {n} ({detail})", if ok { "PASS" } else { "FAIL" }));
    assert!(ok, "criterion {n} failed: {detail}");
}

fn train(cfg: &ExperimentConfig) -> Trained {
    let t = Cache::from_env()
        .train(&cfg.model, &cfg.task, &cfg.train, cfg.seed)
        .expect("training");
    if !t.from_cache {
        say(&format!("  trained {} K={} seed {} in {:.0}s", cfg.task.name(), cfg.task.num_tasks(), cfg.seed, t.train_seconds));
    }
    t
}

/// Runs `check` on seeds 0.. until `REQUIRED` pass or too many fail.
fn over_seeds(n: u32, name: &str, check: impl Fn(u64) -> (bool, String)) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let (mut passed, mut failed) = (0usize, 0usize);
    for seed in 0..SEEDS {
        let (ok, detail) = check(seed);
        say(&format!("  criterion {n} seed {seed}: {} {detail}", if ok { "ok" } else { "miss" }));
        if ok {
            passed += 1;
        } else {
            failed += 1;
        }
        if passed >= REQUIRED || failed > SEEDS as usize - REQUIRED {
            break;
        }
    }
    verdict(n, passed >= REQUIRED, &format!("{name}: {passed} seeds passed, {failed} failed"));
}

fn configs(e: Experiment, seed: u64) -> Vec<ExperimentConfig> {
    ExperimentConfig::defaults(e, seed).expand().expect("valid defaults")
}

fn single(e: Experiment, seed: u64) -> ExperimentConfig {
    let mut all = configs(e, seed);
    assert_eq!(all.len(), 1, "{e} expands to one run");
    all.remove(0)
}

fn top1(e: &Evaluation) -> f64 {
    match e {
        Evaluation::Token { top1, .. } => *top1,
        Evaluation::Points { .. } => panic!("token evaluation expected"),
    }
}

#[test]
fn criterion_01_addk_accuracy() {
    over_seeds(1, "add-k K=4 held-out top-1 >= 0.99 within 600 s", |seed| {
        let cfg = single(Experiment::AddkSteer, seed);
        assert_eq!(cfg.task.num_tasks(), 4);
        let t = train(&cfg);
        let acc = top1(&stages::held_out(&t.checkpoint, &cfg.analysis, seed).unwrap());
        (
            acc >= 0.99 && t.train_seconds <= 600.0,
            format!("top-1 {acc:.4}, trained in {:.0}s", t.train_seconds),
        )
    });
}

#[test]
fn criterion_02_clustering() {
    over_seeds(2, "K=2 cosine gap >= 0.3, separated rows >= 95%", |seed| {
        let cfg = single(Experiment::AddkClustering, seed);
        assert_eq!(cfg.analysis.per_task, 200);
        let t = train(&cfg);
        let c = stages::clustering(&t.checkpoint, &cfg.analysis, seed).unwrap();
        let s = &c.stats;
        (
            s.gap() >= 0.3 && s.separated_fraction >= 0.95,
            format!("intra {:.3}, inter {:.3}, gap {:.3}, separated {:.3}", s.mean_intra, s.mean_inter, s.gap(), s.separated_fraction),
        )
    });
}

#[test]
fn criterion_03_addk_line() {
    over_seeds(3, "K in {4,8,16}: PC1 >= 0.99 and |rho| = 1", |seed| {
        let mut ok = true;
        let mut detail = Vec::new();
        for cfg in configs(Experiment::AddkGeometry, seed) {
            let t = train(&cfg);
            let g = stages::geometry(&t.checkpoint, &cfg.analysis, seed).unwrap();
            let pc1 = g.pca.cumulative(1);
            let order = g.ordering.as_ref().expect("ordering verdict");
            ok &= pc1 >= 0.99 && order.preserved;
            detail.push(format!("K={} pc1 {pc1:.4} rho {:.3}", cfg.task.num_tasks(), order.rho));
        }
        (ok, detail.join(", "))
    });
}

#[test]
fn criterion_04_addk_steering() {
    over_seeds(4, "steering top-3 >= 0.9 at integer targets, top-1 target > opposite for beta < 0.5", |seed| {
        let cfg = single(Experiment::AddkSteer, seed);
        let t = train(&cfg);
        let st = stages::steering(&t.checkpoint, &cfg.analysis, seed).unwrap();
        let mut ok = true;
        let mut detail = Vec::new();
        for (dir, report) in ["forward", "backward"].iter().zip(&st.reports) {
            for row in &report.rows {
                let SteerMetrics::Token { target, opposite, .. } = &row.metrics else {
                    panic!("token steering metrics expected");
                };
                let integral = (row.target - row.target.round()).abs() < 1e-9;
                if integral && target.top3 < 0.9 {
                    ok = false;
                    detail.push(format!("{dir} beta {:.1} top-3 {:.3}", row.beta, target.top3));
                }
                if row.beta < 0.5 && target.top1 <= opposite.top1 {
                    ok = false;
                    detail.push(format!("{dir} beta {:.1} top-1 target {:.3} <= opposite {:.3}", row.beta, target.top1, opposite.top1));
                }
            }
        }
        let summary = st
            .reports
            .iter()
            .map(|r| {
                r.rows
                    .iter()
                    .map(|row| match &row.metrics {
                        SteerMetrics::Token { target, .. } => format!("{:.2}", target.top3),
                        SteerMetrics::Radius { .. } => String::new(),
                    })
                    .collect::<Vec<_>>()
                    .join("/")
            })
            .collect::<Vec<_>>()
            .join(" | ");
        if ok {
            detail.push(format!("top-3 target {summary}"));
        }
        (ok, detail.join("; "))
    });
}

#[test]
fn criterion_05_helix_regime() {
    over_seeds(5, "K=32 gap 1: accuracy in [0.85, 0.95], 2PC <= 0.90, 3PC >= 0.92", |seed| {
        let cfg = single(Experiment::AddkHelix, seed);
        assert_eq!((cfg.task.num_tasks(), cfg.train.batch_size), (32, 2000));
        let t = train(&cfg);
        let acc = top1(&stages::held_out(&t.checkpoint, &cfg.analysis, seed).unwrap());
        let g = stages::geometry(&t.checkpoint, &cfg.analysis, seed).unwrap();
        let (two, three) = (g.pca.cumulative(2), g.pca.cumulative(3));
        (
            (0.85..=0.95).contains(&acc) && two <= 0.90 && three >= 0.92,
            format!("top-1 {acc:.4}, 2PC {two:.4}, 3PC {three:.4}"),
        )
    });
}

#[test]
fn criterion_06_circle_geometry() {
    let reference = [(16, 0.9705), (32, 0.9644), (64, 0.9368)];
    over_seeds(6, "circle 2PC within 0.04 of reference, radius chain preserved, <= 30 min per K", |seed| {
        let mut ok = true;
        let mut detail = Vec::new();
        for cfg in configs(Experiment::CircleGeometry, seed) {
            let k = cfg.task.num_tasks();
            let want = reference.iter().find(|(rk, _)| *rk == k).expect("reference K").1;
            let t = train(&cfg);
            let g = stages::geometry(&t.checkpoint, &cfg.analysis, seed).unwrap();
            let two = g.pca.cumulative(2);
            let chain = g.chain.as_ref().expect("chain verdict").preserved;
            ok &= (two - want).abs() <= 0.04 && chain && t.train_seconds <= 1800.0;
            detail.push(format!("K={k} 2PC {two:.4} chain {chain} {:.0}s", t.train_seconds));
        }
        (ok, detail.join(", "))
    });
}

#[test]
fn criterion_07_circle_steering() {
    over_seeds(7, "radius MSE lowest against the target for interior beta", |seed| {
        let cfg = single(Experiment::CircleSteer, seed);
        let t = train(&cfg);
        let st = stages::steering(&t.checkpoint, &cfg.analysis, seed).unwrap();
        let mut ok = true;
        let mut detail = Vec::new();
        for (dir, report) in ["forward", "backward"].iter().zip(&st.reports) {
            for row in &report.rows {
                let SteerMetrics::Radius { mse_original, mse_opposite, mse_target, .. } = row.metrics else {
                    panic!("radius steering metrics expected");
                };
                if row.beta == 0.0 || row.beta == 1.0 {
                    continue;
                }
                if mse_target >= mse_original.min(mse_opposite) {
                    ok = false;
                    detail.push(format!(
                        "{dir} beta {:.1}: target {mse_target:.4} vs original {mse_original:.4}, opposite {mse_opposite:.4}",
                        row.beta
                    ));
                }
            }
        }
        if ok {
            detail.push(format!("radii {:?} -> {:?}", st.reports[0].original, st.reports[0].opposite));
        }
        (ok, detail.join("; "))
    });
}

#[test]
fn criterion_08_direction_separation() {
    over_seeds(8, "CW/CCW 2-PC classifier >= 0.95, joint 2PC >= 0.85", |seed| {
        let cfg = single(Experiment::CircleCwccw, seed);
        let t = train(&cfg);
        let s = stages::separation(&t.checkpoint, &cfg.analysis, seed).unwrap();
        let two = s.joint.pca.cumulative(2);
        (
            s.direction_accuracy >= 0.95 && two >= 0.85,
            format!("accuracy {:.4}, joint 2PC {two:.4}", s.direction_accuracy),
        )
    });
}

#[test]
fn criterion_09_rect_geometry() {
    over_seeds(9, "rectangle 2PC within 0.05 of 0.9197", |seed| {
        let cfg = single(Experiment::RectGeometry, seed);
        let t = train(&cfg);
        let g = stages::geometry(&t.checkpoint, &cfg.analysis, seed).unwrap();
        let two = g.pca.cumulative(2);
        ((two - 0.9197).abs() <= 0.05, format!("2PC {two:.4} over {} vectors", g.vectors.len()))
    });
}

#[test]
fn criterion_10_probe_ordering() {
    over_seeds(10, "task id +0.10 at layer2.attn_out over layer1.mlp_out; final output best at layer2.mlp_out", |seed| {
        let cfg = single(Experiment::AddkProbe, seed);
        let t = train(&cfg);
        let reports = stages::probes(&t.checkpoint, &cfg.analysis, seed).unwrap();
        let acc = |site: Site, target: ProbeTarget| {
            reports
                .iter()
                .find(|r| r.site == Some(site) && r.target == target)
                .expect("probe report")
                .test_accuracy
        };
        let task_gain = acc(Site::attn_out(1), ProbeTarget::TaskId) - acc(Site::mlp_out(0), ProbeTarget::TaskId);
        let finals: Vec<(Site, f64)> = stages::PROBE_SITES
            .iter()
            .map(|&s| (s, acc(s, ProbeTarget::FinalOutput)))
            .collect();
        let best = acc(Site::mlp_out(1), ProbeTarget::FinalOutput);
        let top = finals.iter().all(|&(_, a)| best >= a);
        let listing = finals.iter().map(|(s, a)| format!("{s} {a:.3}")).collect::<Vec<_>>().join(", ");
        (task_gain >= 0.10 && top, format!("task-id gain {task_gain:.3}; final output {listing}"))
    });
}

#[test]
fn criterion_11_property_suites() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let checks: [(&str, common::Check); 7] = [
        ("gradients", common::gradient_agreement(100)),
        ("generators", common::generator_invariants(50)),
        ("patch oracles", common::patch_oracles(10)),
        ("identity patch", common::identity_patch(5)),
        ("steer/patch linearity", common::steer_patch_linearity(10)),
        ("checkpoint round trip", common::checkpoint_roundtrip(dir.path())),
        ("causal mask", common::causal_mask(20)),
    ];
    let elapsed = start.elapsed().as_secs_f64();
    let mut failures = Vec::new();
    for (name, result) in &checks {
        match result {
            Ok(()) => say(&format!("  criterion 11 {name}: ok")),
            Err(e) => {
                say(&format!("  criterion 11 {name}: {e}"));
                failures.push(*name);
            }
        }
    }
    let ok = failures.is_empty() && elapsed < 60.0;
    let detail = if failures.is_empty() {
        format!("7 suites in {elapsed:.1}s")
    } else {
        format!("failed: {}; {elapsed:.1}s", failures.join(", "))
    };
    verdict(11, ok, &detail);
}
