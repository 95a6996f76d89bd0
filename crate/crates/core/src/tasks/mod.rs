// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded generators for the three task families and the batch type they
//! produce.
//!
//! Every generator is a pure function of its arguments. Sequence `i` of a
//! batch is drawn from its own derived stream, so batches can be produced in
//! any order (or in parallel) without changing their contents.

pub mod addk;
pub mod circle;
pub mod rect;

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use addk::{gen_addk, gen_addk_aligned, gen_addk_mixed, AddKSpec};
pub use circle::{gen_circle, gen_circle_mixed, CircleSpec, CircleTrajectory};
pub use rect::{gen_rect, gen_rect_mixed, RectSpec};

use crate::error::{LabError, Result};
use crate::model::{LossTargets, ModelConfig, ModelInput, ModelVariant};
use crate::rng;

/// Traversal direction of a trajectory; `c = −1` is clockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Cw,
    Ccw,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Cw => -1.0,
            Direction::Ccw => 1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::Cw => "cw",
            Direction::Ccw => "ccw",
        }
    }
}

/// Latent parameter identifying a task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskParam {
    Offset(usize),
    Radius(f64),
    Sides { a: f64, b: f64 },
}

impl TaskParam {
    /// Scalar view for ordering checks; `None` for two-parameter tasks.
    pub fn scalar(&self) -> Option<f64> {
        match *self {
            TaskParam::Offset(k) => Some(k as f64),
            TaskParam::Radius(r) => Some(r),
            TaskParam::Sides { .. } => None,
        }
    }

    pub fn components(&self) -> Vec<f64> {
        match *self {
            TaskParam::Offset(k) => vec![k as f64],
            TaskParam::Radius(r) => vec![r],
            TaskParam::Sides { a, b } => vec![a, b],
        }
    }
}

/// Full generated sequences: `2(n+1)` tokens, or trajectory points.
#[derive(Clone, Debug, PartialEq)]
pub enum Sequences {
    Tokens(Vec<Vec<usize>>),
    Points(Vec<Vec<[f64; 2]>>),
}

/// A batch of generated sequences with their latent parameters.
///
/// The model consumes every element but the last; the last element is the
/// answer to the final query.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub sequences: Sequences,
    /// Index of the task within its family (`usize::MAX` for parameters
    /// outside the training set, e.g. evaluation radii).
    pub task_ids: Vec<usize>,
    pub params: Vec<TaskParam>,
    pub directions: Vec<Option<Direction>>,
    pub seed: u64,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.task_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.task_ids.is_empty()
    }

    pub fn is_tokens(&self) -> bool {
        matches!(self.sequences, Sequences::Tokens(_))
    }

    /// Full sequence length (tokens or points).
    pub fn sequence_len(&self) -> usize {
        match &self.sequences {
            Sequences::Tokens(s) => s.first().map_or(0, Vec::len),
            Sequences::Points(s) => s.first().map_or(0, Vec::len),
        }
    }

    /// Model input length: the full sequence minus its final element.
    pub fn input_len(&self) -> usize {
        self.sequence_len().saturating_sub(1)
    }

    /// Position whose output answers the final query.
    pub fn answer_position(&self) -> usize {
        self.input_len().saturating_sub(1)
    }

    pub fn model_input(&self) -> Result<ModelInput> {
        match &self.sequences {
            Sequences::Tokens(s) => {
                ModelInput::tokens(&s.iter().map(|q| q[..q.len() - 1].to_vec()).collect::<Vec<_>>())
            }
            Sequences::Points(s) => {
                ModelInput::points(&s.iter().map(|q| q[..q.len() - 1].to_vec()).collect::<Vec<_>>())
            }
        }
    }

    /// Answer tokens (token batches only).
    pub fn answers(&self) -> Option<Vec<usize>> {
        match &self.sequences {
            Sequences::Tokens(s) => Some(s.iter().map(|q| q[q.len() - 1]).collect()),
            Sequences::Points(_) => None,
        }
    }

    /// Final query token `x_{n+1}` of each add-k sequence.
    pub fn queries(&self) -> Option<Vec<usize>> {
        match &self.sequences {
            Sequences::Tokens(s) => Some(s.iter().map(|q| q[q.len() - 2]).collect()),
            Sequences::Points(_) => None,
        }
    }

    /// Training targets.
    ///
    /// Token batches: the label `y_i` supervises the output at the position
    /// of `x_i` (labels only). Point batches: the next point supervises every
    /// position from 1 on.
    pub fn loss_targets(&self) -> LossTargets {
        let t = self.input_len();
        match &self.sequences {
            Sequences::Tokens(s) => {
                let mut rows = Vec::new();
                let mut ids = Vec::new();
                for (b, q) in s.iter().enumerate() {
                    for p in (0..t).step_by(2) {
                        rows.push(b * t + p);
                        ids.push(q[p + 1]);
                    }
                }
                LossTargets::Tokens { rows, ids }
            }
            Sequences::Points(s) => {
                let mut rows = Vec::new();
                let mut coords = Vec::new();
                for (b, q) in s.iter().enumerate() {
                    for p in 1..t {
                        rows.push(b * t + p);
                        coords.extend_from_slice(&q[p + 1]);
                    }
                }
                LossTargets::Points { rows, coords }
            }
        }
    }

    /// Sequences with the given indices, in order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let sequences = match &self.sequences {
            Sequences::Tokens(s) => Sequences::Tokens(idx.iter().map(|&i| s[i].clone()).collect()),
            Sequences::Points(s) => Sequences::Points(idx.iter().map(|&i| s[i].clone()).collect()),
        };
        Self {
            sequences,
            task_ids: idx.iter().map(|&i| self.task_ids[i]).collect(),
            params: idx.iter().map(|&i| self.params[i]).collect(),
            directions: idx.iter().map(|&i| self.directions[i]).collect(),
            seed: self.seed,
        }
    }

    /// Concatenates batches of the same kind; the result keeps the first seed.
    pub fn concat(parts: Vec<SequenceBatch>) -> Result<Self> {
        let mut iter = parts.into_iter();
        let mut out = iter
            .next()
            .ok_or_else(|| LabError::InvalidArgument("nothing to concatenate".into()))?;
        for p in iter {
            match (&mut out.sequences, p.sequences) {
                (Sequences::Tokens(a), Sequences::Tokens(b)) => a.extend(b),
                (Sequences::Points(a), Sequences::Points(b)) => a.extend(b),
                _ => return Err(LabError::InvalidArgument("cannot mix token and point batches".into())),
            }
            out.task_ids.extend(p.task_ids);
            out.params.extend(p.params);
            out.directions.extend(p.directions);
        }
        Ok(out)
    }

    /// Writes one CSV row per sequence element.
    ///
    /// Token batches: `seq_id,task_id,position,token`.
    /// Point batches: `seq_id,task_id,position,x,y`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let task = |t: usize| if t == usize::MAX { String::new() } else { t.to_string() };
        match &self.sequences {
            Sequences::Tokens(s) => {
                writeln!(w, "seq_id,task_id,position,token")?;
                for (i, q) in s.iter().enumerate() {
                    for (p, tok) in q.iter().enumerate() {
                        writeln!(w, "{i},{},{p},{tok}", task(self.task_ids[i]))?;
                    }
                }
            }
            Sequences::Points(s) => {
                writeln!(w, "seq_id,task_id,position,x,y")?;
                for (i, q) in s.iter().enumerate() {
                    for (p, pt) in q.iter().enumerate() {
                        writeln!(w, "{i},{},{p},{},{}", task(self.task_ids[i]), pt[0], pt[1])?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Serializable description of a task family. Training parameter sets for
/// the continuous families are drawn from the experiment seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TaskConfig {
    AddK {
        vocab_size: usize,
        n_examples: usize,
        num_tasks: usize,
        first_offset: usize,
        offset_gap: usize,
    },
    Circle {
        /// Steps per trajectory (`12m + 1`).
        n: usize,
        num_tasks: usize,
        radius_min: f64,
        radius_max: f64,
    },
    Rect {
        points_per_edge: usize,
        n: usize,
        num_tasks: usize,
        side_min: f64,
        side_max: f64,
    },
}

impl TaskConfig {
    /// V = 100, n = 4, offsets 1, 4, 7, ….
    pub fn addk(num_tasks: usize) -> Self {
        TaskConfig::AddK {
            vocab_size: 100,
            n_examples: 4,
            num_tasks,
            first_offset: 1,
            offset_gap: 3,
        }
    }

    /// n = 13, radii uniform in [1, 4].
    pub fn circle(num_tasks: usize) -> Self {
        TaskConfig::Circle {
            n: 13,
            num_tasks,
            radius_min: 1.0,
            radius_max: 4.0,
        }
    }

    /// e = 5, n = 15, sides uniform in [1, 4].
    pub fn rect(num_tasks: usize) -> Self {
        TaskConfig::Rect {
            points_per_edge: 5,
            n: 15,
            num_tasks,
            side_min: 1.0,
            side_max: 4.0,
        }
    }

    pub fn num_tasks(&self) -> usize {
        match *self {
            TaskConfig::AddK { num_tasks, .. }
            | TaskConfig::Circle { num_tasks, .. }
            | TaskConfig::Rect { num_tasks, .. } => num_tasks,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::AddK { .. } => "addk",
            TaskConfig::Circle { .. } => "circle",
            TaskConfig::Rect { .. } => "rect",
        }
    }

    /// Materializes the family, drawing parameter sets from `seed`.
    pub fn build(&self, seed: u64) -> Result<TaskFamily> {
        let params = sample_task_params(self, self.num_tasks(), seed)?;
        Ok(match *self {
            TaskConfig::AddK {
                vocab_size,
                n_examples,
                ..
            } => TaskFamily::AddK(AddKSpec::new(
                vocab_size,
                n_examples,
                params.iter().map(|p| p.scalar().unwrap_or(0.0) as usize).collect(),
            )?),
            TaskConfig::Circle { n, .. } => TaskFamily::Circle(CircleSpec::new(
                n,
                params.iter().filter_map(TaskParam::scalar).collect(),
            )?),
            TaskConfig::Rect {
                points_per_edge, n, ..
            } => TaskFamily::Rect(RectSpec::new(
                points_per_edge,
                n,
                params
                    .iter()
                    .map(|p| match *p {
                        TaskParam::Sides { a, b } => (a, b),
                        _ => unreachable!("rect params are sides"),
                    })
                    .collect(),
            )?),
        })
    }

    /// Model configuration sized for this family.
    pub fn model_config(&self) -> ModelConfig {
        match *self {
            TaskConfig::AddK {
                vocab_size,
                n_examples,
                ..
            } => ModelConfig::small(ModelVariant::Token { vocab_size }, 2 * (n_examples + 1)),
            TaskConfig::Circle { n, .. } => ModelConfig::small(
                ModelVariant::Continuous {
                    input_dim: 2,
                    output_dim: 2,
                },
                n + 1,
            ),
            TaskConfig::Rect { n, .. } => ModelConfig::small(
                ModelVariant::Continuous {
                    input_dim: 2,
                    output_dim: 2,
                },
                n,
            ),
        }
    }
}

/// Task parameters of a family.
///
/// add-k returns the arithmetic progression of offsets; circle and rectangle
/// return `count` uniform draws sorted ascending (lexicographically for
/// `(a, b)`).
pub fn sample_task_params(config: &TaskConfig, count: usize, seed: u64) -> Result<Vec<TaskParam>> {
    if count == 0 {
        return Err(LabError::InvalidArgument("need at least one task".into()));
    }
    let mut r = rng::derived_rng(seed, rng::stream::TASK_PARAMS, 0);
    Ok(match *config {
        TaskConfig::AddK {
            first_offset,
            offset_gap,
            ..
        } => addk::arithmetic_offsets(first_offset, offset_gap, count)
            .into_iter()
            .map(TaskParam::Offset)
            .collect(),
        TaskConfig::Circle {
            radius_min,
            radius_max,
            ..
        } => {
            let mut radii: Vec<f64> = (0..count).map(|_| r.random_range(radius_min..=radius_max)).collect();
            radii.sort_by(f64::total_cmp);
            radii.into_iter().map(TaskParam::Radius).collect()
        }
        TaskConfig::Rect { side_min, side_max, .. } => {
            let mut sides: Vec<(f64, f64)> = (0..count)
                .map(|_| (r.random_range(side_min..=side_max), r.random_range(side_min..=side_max)))
                .collect();
            sides.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
            sides.into_iter().map(|(a, b)| TaskParam::Sides { a, b }).collect()
        }
    })
}

/// `count` evenly spaced values covering `[lo, hi]` inclusively.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// A materialized task family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TaskFamily {
    AddK(AddKSpec),
    Circle(CircleSpec),
    Rect(RectSpec),
}

impl TaskFamily {
    /// Training batch with tasks drawn uniformly per sequence.
    pub fn mixed_batch(&self, count: usize, seed: u64) -> Result<SequenceBatch> {
        match self {
            TaskFamily::AddK(s) => gen_addk_mixed(s, count, seed),
            TaskFamily::Circle(s) => gen_circle_mixed(s, count, seed),
            TaskFamily::Rect(s) => gen_rect_mixed(s, count, seed),
        }
    }

    pub fn num_tasks(&self) -> usize {
        match self {
            TaskFamily::AddK(s) => s.offsets.len(),
            TaskFamily::Circle(s) => s.radii.len(),
            TaskFamily::Rect(s) => s.sides.len(),
        }
    }

    pub fn task_params(&self) -> Vec<TaskParam> {
        match self {
            TaskFamily::AddK(s) => s.offsets.iter().map(|&k| TaskParam::Offset(k)).collect(),
            TaskFamily::Circle(s) => s.radii.iter().map(|&r| TaskParam::Radius(r)).collect(),
            TaskFamily::Rect(s) => s.sides.iter().map(|&(a, b)| TaskParam::Sides { a, b }).collect(),
        }
    }

    /// Batch of one task parameter (which need not be in the training set).
    pub fn batch_for(
        &self,
        param: TaskParam,
        direction: Option<Direction>,
        count: usize,
        seed: u64,
    ) -> Result<SequenceBatch> {
        match (self, param) {
            (TaskFamily::AddK(s), TaskParam::Offset(k)) => {
                let task = s
                    .offsets
                    .iter()
                    .position(|&o| o == k)
                    .ok_or_else(|| LabError::InvalidArgument(format!("offset {k} not in family")))?;
                gen_addk(s, task, count, seed)
            }
            (TaskFamily::Circle(s), TaskParam::Radius(r)) => gen_circle(s, r, direction, count, seed),
            (TaskFamily::Rect(s), TaskParam::Sides { a, b }) => gen_rect(s, a, b, direction, count, seed),
            _ => Err(LabError::InvalidArgument(format!(
                "parameter {param:?} does not belong to this family"
            ))),
        }
    }

    pub fn is_token(&self) -> bool {
        matches!(self, TaskFamily::AddK(_))
    }

    /// Position read for task vectors: the answer position for add-k and
    /// `⌊n/2⌋` for trajectories.
    pub fn task_vector_position(&self) -> usize {
        match self {
            TaskFamily::AddK(s) => 2 * s.n_examples,
            TaskFamily::Circle(s) => s.n / 2,
            TaskFamily::Rect(s) => s.n / 2,
        }
    }
}
