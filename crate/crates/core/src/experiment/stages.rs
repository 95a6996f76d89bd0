// SPDX-License-Identifier: MIT OR Apache-2.0

//! Analysis stages run on a trained checkpoint.
//!
//! Every stage draws its sequences from `derive(seed, ANALYSIS, stage)` so
//! stages are independent of each other and of the order they run in.

use serde::{Deserialize, Serialize};

use super::config::AnalysisConfig;
use crate::analysis::{
    cluster_stats, cosine_matrix, extract_task_vectors, fit_linear_probe, fit_logistic, nearest_neighbor_chain,
    ordering_check, pca, sequence_activations, Cell, ChainVerdict, ClusterStats, ExtractSpec, OrderingVerdict,
    PcaReport, ProbeReport, ProbeTarget, TaskVector,
};
use crate::error::{LabError, Result};
use crate::intervention::{patch_run, steer, InterventionSpec, Payload, PatchReport, SteerReport};
use crate::model::Site;
use crate::rng::{self, stream};
use crate::tasks::{gen_addk_aligned, linspace, Direction, SequenceBatch, TaskFamily, TaskParam};
use crate::train::{evaluate, Checkpoint, Evaluation};

const CLUSTER: u64 = 1;
const PROBE: u64 = 2;
const GEOMETRY: u64 = 3;
const STEER: u64 = 4;
const PATCH: u64 = 5;
const HELD_OUT: u64 = 6;

fn stage_seed(seed: u64, stage: u64) -> u64 {
    rng::derive_seed(seed, stream::ANALYSIS, stage)
}

/// Top-1/top-3 accuracy or MSE on a fresh held-out batch.
pub fn held_out(ckpt: &Checkpoint, a: &AnalysisConfig, seed: u64) -> Result<Evaluation> {
    let batch = ckpt.family.mixed_batch(a.eval_size, stage_seed(seed, HELD_OUT))?;
    evaluate(&ckpt.params, &ckpt.model_config, &batch)
}

fn position(ckpt: &Checkpoint, a: &AnalysisConfig) -> usize {
    a.position.unwrap_or_else(|| ckpt.family.task_vector_position())
}

/// Per-sequence embeddings of every training task, compared pairwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Task index per row.
    pub labels: Vec<usize>,
    pub cosines: Vec<Vec<f64>>,
    pub stats: ClusterStats,
}

pub fn clustering(ckpt: &Checkpoint, a: &AnalysisConfig, seed: u64) -> Result<Clustering> {
    let base = stage_seed(seed, CLUSTER);
    let pos = position(ckpt, a);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, p) in ckpt.family.task_params().into_iter().enumerate() {
        let batch = ckpt
            .family
            .batch_for(p, a.direction, a.per_task, rng::derive_seed(base, stream::ANALYSIS, i as u64))?;
        rows.extend(sequence_activations(&ckpt.params, &ckpt.model_config, &batch, a.site, pos)?);
        labels.extend(std::iter::repeat_n(i, batch.len()));
    }
    let cosines = cosine_matrix(&rows)?;
    let stats = cluster_stats(&cosines, &labels)?;
    Ok(Clustering { labels, cosines, stats })
}

/// The four probed sites, in network order.
pub const PROBE_SITES: [Site; 4] = [Site::mlp_out(0), Site::attn_out(1), Site::mlp_hidden(1), Site::mlp_out(1)];

/// Task-id and final-output probes at every probe site.
///
/// Final-output classes with fewer than two samples are left out, since a
/// stratified split cannot place them on both sides.
pub fn probes(ckpt: &Checkpoint, a: &AnalysisConfig, seed: u64) -> Result<Vec<ProbeReport>> {
    if !ckpt.family.is_token() {
        return Err(LabError::InvalidArgument("probing needs a token model".into()));
    }
    let base = stage_seed(seed, PROBE);
    let parts = ckpt
        .family
        .task_params()
        .into_iter()
        .enumerate()
        .map(|(i, p)| ckpt.family.batch_for(p, None, a.probe_per_task, rng::derive_seed(base, stream::ANALYSIS, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let batch = SequenceBatch::concat(parts)?;
    let pos = a.position.unwrap_or(batch.answer_position());
    let answers = batch.answers().expect("token batch");
    let mut counts = std::collections::HashMap::new();
    answers.iter().for_each(|y| *counts.entry(*y).or_insert(0usize) += 1);
    let keep: Vec<usize> = (0..answers.len()).filter(|&i| counts[&answers[i]] >= 2).collect();

    let mut reports = Vec::new();
    for site in PROBE_SITES {
        let emb = sequence_activations(&ckpt.params, &ckpt.model_config, &batch, site, pos)?;
        reports.push(fit_linear_probe(&emb, &batch.task_ids, Some(site), ProbeTarget::TaskId, &a.probe)?);
        let x: Vec<Vec<f64>> = keep.iter().map(|&i| emb[i].clone()).collect();
        let y: Vec<usize> = keep.iter().map(|&i| answers[i]).collect();
        reports.push(fit_linear_probe(&x, &y, Some(site), ProbeTarget::FinalOutput, &a.probe)?);
    }
    Ok(reports)
}

/// Extraction cells of a geometry run. Evaluation grids span `[1, 4]`.
pub fn geometry_cells(family: &TaskFamily, a: &AnalysisConfig, both_directions: bool) -> Vec<Cell> {
    let params: Vec<TaskParam> = match (family, a.eval_grid) {
        (_, 0) | (TaskFamily::AddK(_), _) => family.task_params(),
        (TaskFamily::Circle(_), g) => linspace(1.0, 4.0, g).into_iter().map(TaskParam::Radius).collect(),
        (TaskFamily::Rect(_), g) => {
            let sides = linspace(1.0, 4.0, g);
            sides
                .iter()
                .flat_map(|&x| sides.iter().map(move |&y| TaskParam::Sides { a: x, b: y }))
                .collect()
        }
    };
    if both_directions {
        [Direction::Cw, Direction::Ccw]
            .into_iter()
            .flat_map(|d| params.iter().map(move |&p| (p, Some(d))))
            .collect()
    } else {
        params.into_iter().map(|p| (p, a.direction)).collect()
    }
}

/// Task vectors and their principal components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub vectors: Vec<TaskVector>,
    pub pca: PcaReport,
    /// Spearman check on PC1 (scalar parameters only).
    pub ordering: Option<OrderingVerdict>,
    /// Nearest-neighbour walk on the first two PCs (scalar parameters only).
    pub chain: Option<ChainVerdict>,
}

fn task_vectors(ckpt: &Checkpoint, a: &AnalysisConfig, cells: &[Cell], seed: u64) -> Result<Vec<TaskVector>> {
    let spec = ExtractSpec {
        site: a.site,
        position: a.position,
        per_task: a.per_task,
        seed,
    };
    extract_task_vectors(&ckpt.params, &ckpt.model_config, &ckpt.family, cells, &spec)
}

fn geometry_of(vectors: Vec<TaskVector>, n_components: usize, check_order: bool) -> Result<Geometry> {
    let rows: Vec<Vec<f64>> = vectors.iter().map(|v| v.vector.clone()).collect();
    let report = pca(&rows, n_components)?;
    let scalars: Option<Vec<f64>> = vectors.iter().map(|v| v.param.scalar()).collect();
    let (ordering, chain) = match scalars {
        Some(params) if check_order => {
            let ordering = ordering_check(&report, &params)?;
            let k = n_components.min(2);
            let pts: Vec<Vec<f64>> = report.projections.iter().map(|p| p[..k].to_vec()).collect();
            (Some(ordering), Some(nearest_neighbor_chain(&pts, &params)?))
        }
        _ => (None, None),
    };
    Ok(Geometry {
        vectors,
        pca: report,
        ordering,
        chain,
    })
}

pub fn geometry(ckpt: &Checkpoint, a: &AnalysisConfig, seed: u64) -> Result<Geometry> {
    let cells = geometry_cells(&ckpt.family, a, false);
    geometry_of(task_vectors(ckpt, a, &cells, stage_seed(seed, GEOMETRY))?, a.pca_components, true)
}

/// Clockwise and counter-clockwise task vectors, separately and jointly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub joint: Geometry,
    pub cw_two_pc: f64,
    pub ccw_two_pc: f64,
    /// Accuracy of a logistic direction classifier on the joint 2-PC
    /// coordinates, fit and scored on all vectors.
    pub direction_accuracy: f64,
}

pub fn separation(ckpt: &Checkpoint, a: &AnalysisConfig, seed: u64) -> Result<Separation> {
    if ckpt.family.is_token() {
        return Err(LabError::InvalidArgument("direction separation needs a trajectory model".into()));
    }
    let cells = geometry_cells(&ckpt.family, a, true);
    let vectors = task_vectors(ckpt, a, &cells, stage_seed(seed, GEOMETRY))?;
    let two_pc = |d: Direction| -> Result<f64> {
        let rows: Vec<Vec<f64>> = vectors.iter().filter(|v| v.direction == Some(d)).map(|v| v.vector.clone()).collect();
        Ok(pca(&rows, 2)?.cumulative(2))
    };
    let (cw_two_pc, ccw_two_pc) = (two_pc(Direction::Cw)?, two_pc(Direction::Ccw)?);
    let joint = geometry_of(vectors, a.pca_components.max(2), false)?;
    let x: Vec<Vec<f64>> = joint.pca.projections.iter().map(|p| p[..2].to_vec()).collect();
    let y: Vec<usize> = joint.vectors.iter().map(|v| usize::from(v.direction == Some(Direction::Ccw))).collect();
    let clf = fit_logistic(&x, &y, &a.probe)?;
    Ok(Separation {
        direction_accuracy: clf.accuracy(&x, &y)?,
        joint,
        cw_two_pc,
        ccw_two_pc,
    })
}

/// Steering between the smallest and largest training parameters, both
/// ways.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Steering {
    pub vectors: [TaskVector; 2],
    /// First → last, then last → first.
    pub reports: [SteerReport; 2],
}

pub fn steering(ckpt: &Checkpoint, a: &AnalysisConfig, seed: u64) -> Result<Steering> {
    let params = ckpt.family.task_params();
    let scalar = |p: &TaskParam| p.scalar().ok_or_else(|| LabError::InvalidArgument("steering needs scalar parameters".into()));
    let mut order: Vec<usize> = (0..params.len()).collect();
    let keys = params.iter().map(scalar).collect::<Result<Vec<f64>>>()?;
    order.sort_by(|&i, &j| keys[i].total_cmp(&keys[j]));
    let (lo, hi) = (order[0], order[order.len() - 1]);
    if lo == hi {
        return Err(LabError::InvalidArgument("steering needs two distinct tasks".into()));
    }
    let base = stage_seed(seed, STEER);
    let cells = [(params[lo], None), (params[hi], None)];
    let tv = task_vectors(ckpt, a, &cells, base)?;
    let eval_seed = rng::derive_seed(base, stream::EVAL, 0);
    let batches: [SequenceBatch; 2] = match &ckpt.family {
        TaskFamily::AddK(spec) => {
            let (x, y) = gen_addk_aligned(spec, lo, hi, a.per_task, eval_seed)?;
            [x, y]
        }
        fam => [
            fam.batch_for(params[lo], None, a.per_task, eval_seed)?,
            fam.batch_for(params[hi], None, a.per_task, rng::derive_seed(base, stream::EVAL, 1))?,
        ],
    };
    let forward = steer(&ckpt.params, &ckpt.model_config, &batches[0], &tv[0], &tv[1], &a.betas)?;
    let backward = steer(&ckpt.params, &ckpt.model_config, &batches[1], &tv[1], &tv[0], &a.betas)?;
    let [t0, t1]: [TaskVector; 2] = tv.try_into().map_err(|_| LabError::InvalidArgument("two task vectors".into()))?;
    Ok(Steering {
        vectors: [t0, t1],
        reports: [forward, backward],
    })
}

/// Patches the smallest-offset run with activations of the largest-offset
/// run at the configured site and the answer position.
pub fn patching(ckpt: &Checkpoint, a: &AnalysisConfig, seed: u64) -> Result<PatchReport> {
    let TaskFamily::AddK(spec) = &ckpt.family else {
        return Err(LabError::InvalidArgument("patching needs an add-k model".into()));
    };
    let last = spec.offsets.len() - 1;
    if last == 0 {
        return Err(LabError::InvalidArgument("patching needs two tasks".into()));
    }
    let (normal, alt) = gen_addk_aligned(spec, 0, last, a.per_task, stage_seed(seed, PATCH))?;
    let pos = a.position.unwrap_or(normal.answer_position());
    let site_spec = InterventionSpec::new(a.site, vec![pos], Payload::Donor);
    patch_run(&ckpt.params, &ckpt.model_config, &normal, &alt, &site_spec)
}

/// Count of adjacent decreases in a sequence.
pub fn inversions(means: &[f64]) -> usize {
    means.windows(2).filter(|w| w[1] < w[0]).count()
}

/// One-line description of an evaluation.
pub fn describe_eval(e: &Evaluation) -> String {
    match e {
        Evaluation::Token { top1, top3, count } => format!("top-1 {top1:.4}, top-3 {top3:.4} on {count} sequences"),
        Evaluation::Points { mse, count, .. } => format!("next-point MSE {mse:.6} on {count} sequences"),
    }
}
