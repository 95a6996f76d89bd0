// SPDX-License-Identifier: MIT OR Apache-2.0

//! Task vectors and their geometry: extraction, cosine similarity, linear
//! probes and PCA.

mod pca;
mod probe;

use serde::{Deserialize, Serialize};

pub use pca::{
    nearest_neighbor_chain, ordering_check, pca, ranks, spearman, ChainVerdict, OrderingVerdict, PcaReport,
};
pub use probe::{
    fit_linear_probe, fit_logistic, stratified_split, LogisticModel, ProbeConfig, ProbeReport, ProbeTarget,
};

use crate::error::{LabError, Result};
use crate::model::{self, ModelConfig, ModelParams, Site};
use crate::rng;
use crate::tasks::{Direction, SequenceBatch, TaskFamily, TaskParam};

/// Mean activation of one task (and direction) at one site and position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskVector {
    pub param: TaskParam,
    pub direction: Option<Direction>,
    pub site: Site,
    pub position: usize,
    pub vector: Vec<f64>,
    pub n_averaged: usize,
}

const CHUNK: usize = 256;

/// Activation rows of every sequence at `(site, position)`.
pub fn sequence_activations(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &SequenceBatch,
    site: Site,
    position: usize,
) -> Result<Vec<Vec<f64>>> {
    if batch.is_tokens() != config.variant.is_token() {
        return Err(LabError::InvalidArgument("batch kind does not match the model variant".into()));
    }
    if position >= batch.input_len() {
        return Err(LabError::InvalidSite(format!(
            "position {position} outside inputs of length {}",
            batch.input_len()
        )));
    }
    let mut out = Vec::with_capacity(batch.len());
    let all: Vec<usize> = (0..batch.len()).collect();
    for idx in all.chunks(CHUNK) {
        let sub = batch.subset(idx);
        let fwd = model::forward(params, config, &sub.model_input()?, &[site], &[])?;
        let trace = fwd.trace.expect("trace requested");
        out.extend(trace.rows_at(site, position)?);
    }
    Ok(out)
}

/// Element-wise running mean of equal-length rows (exact for identical rows).
pub fn mean_vector(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = rows
        .first()
        .ok_or_else(|| LabError::InvalidArgument("mean of no vectors".into()))?;
    let mut m = first.clone();
    for (k, r) in rows.iter().enumerate().skip(1) {
        if r.len() != m.len() {
            return Err(LabError::shape("mean_vector", &[m.len()], &[r.len()]));
        }
        let w = 1.0 / (k + 1) as f64;
        for (a, b) in m.iter_mut().zip(r) {
            *a += (b - *a) * w;
        }
    }
    Ok(m)
}

/// One extraction cell: a task parameter, optionally restricted to a
/// direction.
pub type Cell = (TaskParam, Option<Direction>);

/// Extraction settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractSpec {
    pub site: Site,
    /// Defaults to the family's task-vector position.
    pub position: Option<usize>,
    pub per_task: usize,
    pub seed: u64,
}

/// One task vector per cell; cell `i` averages `per_task` sequences drawn
/// from seed `derive(seed, ANALYSIS, i)`.
pub fn extract_task_vectors(
    params: &ModelParams,
    config: &ModelConfig,
    family: &TaskFamily,
    cells: &[Cell],
    spec: &ExtractSpec,
) -> Result<Vec<TaskVector>> {
    if family.is_token() != config.variant.is_token() {
        return Err(LabError::InvalidArgument("task family does not match the model variant".into()));
    }
    spec.site.validate(config)?;
    if spec.per_task == 0 {
        return Err(LabError::InvalidArgument("per_task must be positive".into()));
    }
    let position = spec.position.unwrap_or_else(|| family.task_vector_position());
    cells
        .iter()
        .enumerate()
        .map(|(i, &(param, direction))| {
            let batch = family.batch_for(
                param,
                direction,
                spec.per_task,
                rng::derive_seed(spec.seed, rng::stream::ANALYSIS, i as u64),
            )?;
            let rows = sequence_activations(params, config, &batch, spec.site, position)?;
            Ok(TaskVector {
                param,
                direction,
                site: spec.site,
                position,
                vector: mean_vector(&rows)?,
                n_averaged: rows.len(),
            })
        })
        .collect()
}

/// Pairwise cosine similarities.
pub fn cosine_matrix(vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let norms: Vec<f64> = vectors
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(LabError::InvalidArgument(format!("vector {i} is zero")));
    }
    let n = vectors.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        m[i][i] = 1.0;
        for j in (i + 1)..n {
            if vectors[i].len() != vectors[j].len() {
                return Err(LabError::shape("cosine_matrix", &[vectors[i].len()], &[vectors[j].len()]));
            }
            let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
            let c = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    Ok(m)
}

/// Summary of a labelled cosine matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    /// Mean over off-diagonal same-label pairs.
    pub mean_intra: f64,
    /// Mean over different-label pairs.
    pub mean_inter: f64,
    /// Fraction of rows whose least similar same-label entry exceeds their
    /// most similar other-label entry.
    pub separated_fraction: f64,
}

impl ClusterStats {
    pub fn gap(&self) -> f64 {
        self.mean_intra - self.mean_inter
    }
}

pub fn cluster_stats(cosines: &[Vec<f64>], labels: &[usize]) -> Result<ClusterStats> {
    let n = labels.len();
    if cosines.len() != n || cosines.iter().any(|r| r.len() != n) {
        return Err(LabError::InvalidArgument("cosine matrix does not match the labels".into()));
    }
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    let mut separated = 0usize;
    for i in 0..n {
        let mut min_intra = f64::INFINITY;
        let mut max_inter = f64::NEG_INFINITY;
        for j in 0..n {
            if i == j {
                continue;
            }
            let c = cosines[i][j];
            if labels[i] == labels[j] {
                intra += c;
                n_intra += 1;
                min_intra = min_intra.min(c);
            } else {
                inter += c;
                n_inter += 1;
                max_inter = max_inter.max(c);
            }
        }
        separated += usize::from(min_intra > max_inter);
    }
    if n_intra == 0 || n_inter == 0 {
        return Err(LabError::InvalidArgument("need two labels with at least two members".into()));
    }
    Ok(ClusterStats {
        mean_intra: intra / n_intra as f64,
        mean_inter: inter / n_inter as f64,
        separated_fraction: separated as f64 / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SiteKind;
    use crate::tasks::{Sequences, TaskConfig};

    #[test]
    fn cosine_examples() {
        let m = cosine_matrix(&[vec![1.0, 2.0], vec![-2.0, 1.0], vec![-1.0, -2.0]]).unwrap();
        assert_eq!(m[0][0], 1.0);
        assert!(m[0][1].abs() < 1e-15);
        assert!((m[0][2] + 1.0).abs() < 1e-15);
        assert_eq!(m[1][2], m[2][1]);
        assert!(cosine_matrix(&[vec![0.0, 0.0], vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn cluster_stats_on_blocks() {
        let m = vec![
            vec![1.0, 0.9, 0.1, 0.2],
            vec![0.9, 1.0, 0.0, 0.1],
            vec![0.1, 0.0, 1.0, 0.8],
            vec![0.2, 0.1, 0.8, 1.0],
        ];
        let s = cluster_stats(&m, &[0, 0, 1, 1]).unwrap();
        assert!((s.mean_intra - 0.85).abs() < 1e-12);
        assert!((s.mean_inter - 0.1).abs() < 1e-12);
        assert_eq!(s.separated_fraction, 1.0);
    }

    #[test]
    fn identical_sequences_average_to_themselves() {
        let task = TaskConfig::addk(2);
        let family = task.build(0).unwrap();
        let mut config = task.model_config();
        config.d_model = 16;
        config.d_mlp = 32;
        let params = ModelParams::init(&config, 3).unwrap();
        let one = family.mixed_batch(1, 5).unwrap();
        let Sequences::Tokens(s) = &one.sequences else { panic!() };
        let copies = SequenceBatch {
            sequences: Sequences::Tokens(vec![s[0].clone(); 7]),
            task_ids: vec![one.task_ids[0]; 7],
            params: vec![one.params[0]; 7],
            directions: vec![None; 7],
            seed: 0,
        };
        let site = Site::new(1, SiteKind::AttnOut);
        let single = sequence_activations(&params, &config, &one, site, 8).unwrap();
        let rows = sequence_activations(&params, &config, &copies, site, 8).unwrap();
        assert_eq!(mean_vector(&rows).unwrap(), single[0]);

        let cells: Vec<Cell> = family.task_params().into_iter().map(|p| (p, None)).collect();
        let spec = ExtractSpec {
            site,
            position: None,
            per_task: 4,
            seed: 1,
        };
        let tv = extract_task_vectors(&params, &config, &family, &cells, &spec).unwrap();
        assert_eq!(tv.len(), 2);
        assert_eq!(tv[0].position, 8);
        assert_eq!(tv[0].n_averaged, 4);
        assert_eq!(tv, extract_task_vectors(&params, &config, &family, &cells, &spec).unwrap());
    }
}
