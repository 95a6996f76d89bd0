// SPDX-License-Identifier: MIT OR Apache-2.0

//! add-k: pairs `(x, x + k)` serialized as `x₁ y₁ x₂ y₂ … x_{n+1} y_{n+1}`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{SequenceBatch, Sequences, TaskParam};
use crate::error::{LabError, Result};
use crate::rng;

/// A family of add-k tasks sharing vocabulary and context length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AddKSpec {
    pub vocab_size: usize,
    /// In-context examples before the query pair.
    pub n_examples: usize,
    /// Strictly increasing offsets, each in `1..vocab_size`.
    pub offsets: Vec<usize>,
}

impl AddKSpec {
    pub fn new(vocab_size: usize, n_examples: usize, offsets: Vec<usize>) -> Result<Self> {
        if offsets.is_empty() {
            return Err(LabError::InvalidArgument("add-k needs at least one offset".into()));
        }
        if offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LabError::InvalidArgument(format!(
                "add-k offsets must be strictly increasing: {offsets:?}"
            )));
        }
        if let Some(&k) = offsets.iter().find(|&&k| k == 0 || k >= vocab_size) {
            return Err(LabError::InvalidArgument(format!(
                "offset {k} outside 1..{vocab_size}"
            )));
        }
        Ok(Self {
            vocab_size,
            n_examples,
            offsets,
        })
    }

    /// Offsets `first, first + gap, …` (`count` of them).
    pub fn arithmetic(
        vocab_size: usize,
        n_examples: usize,
        first: usize,
        gap: usize,
        count: usize,
    ) -> Result<Self> {
        Self::new(vocab_size, n_examples, arithmetic_offsets(first, gap, count))
    }

    /// Tokens in a full generated sequence, `2(n + 1)`.
    pub fn sequence_len(&self) -> usize {
        2 * (self.n_examples + 1)
    }

    pub fn offset(&self, task: usize) -> Result<usize> {
        self.offsets.get(task).copied().ok_or_else(|| {
            LabError::InvalidArgument(format!(
                "task index {task} out of range for {} offsets",
                self.offsets.len()
            ))
        })
    }
}

pub fn arithmetic_offsets(first: usize, gap: usize, count: usize) -> Vec<usize> {
    (0..count).map(|i| first + i * gap).collect()
}

fn draw_sequence(spec: &AddKSpec, k: usize, x_max: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..=spec.n_examples)
        .flat_map(|_| {
            let x = rng.random_range(0..=x_max);
            [x, x + k]
        })
        .collect()
}

/// `count` sequences of task `task`, x drawn uniformly from `0..=V−1−k`.
pub fn gen_addk(spec: &AddKSpec, task: usize, count: usize, seed: u64) -> Result<SequenceBatch> {
    let k = spec.offset(task)?;
    if k >= spec.vocab_size {
        return Err(LabError::InvalidArgument(format!("offset {k} >= vocabulary {}", spec.vocab_size)));
    }
    require_count(count)?;
    let seqs = (0..count)
        .map(|i| {
            let mut r = rng::derived_rng(seed, rng::stream::SEQUENCE, i as u64);
            draw_sequence(spec, k, spec.vocab_size - 1 - k, &mut r)
        })
        .collect();
    Ok(SequenceBatch {
        sequences: Sequences::Tokens(seqs),
        task_ids: vec![task; count],
        params: vec![TaskParam::Offset(k); count],
        directions: vec![None; count],
        seed,
    })
}

/// Sequences whose task is drawn uniformly from the family, one per row.
pub fn gen_addk_mixed(spec: &AddKSpec, count: usize, seed: u64) -> Result<SequenceBatch> {
    require_count(count)?;
    let mut seqs = Vec::with_capacity(count);
    let mut task_ids = Vec::with_capacity(count);
    let mut params = Vec::with_capacity(count);
    for i in 0..count {
        let mut r = rng::derived_rng(seed, rng::stream::SEQUENCE, i as u64);
        let task = r.random_range(0..spec.offsets.len());
        let k = spec.offsets[task];
        seqs.push(draw_sequence(spec, k, spec.vocab_size - 1 - k, &mut r));
        task_ids.push(task);
        params.push(TaskParam::Offset(k));
    }
    Ok(SequenceBatch {
        sequences: Sequences::Tokens(seqs),
        task_ids,
        params,
        directions: vec![None; count],
        seed,
    })
}

/// Two batches sharing every `x`, one per task, row-aligned.
///
/// `x` is drawn from `0..=V−1−max(k_a, k_b)` so both label sets stay inside
/// the vocabulary.
pub fn gen_addk_aligned(
    spec: &AddKSpec,
    task_a: usize,
    task_b: usize,
    count: usize,
    seed: u64,
) -> Result<(SequenceBatch, SequenceBatch)> {
    let (ka, kb) = (spec.offset(task_a)?, spec.offset(task_b)?);
    require_count(count)?;
    let x_max = spec.vocab_size - 1 - ka.max(kb);
    let mut a = Vec::with_capacity(count);
    let mut b = Vec::with_capacity(count);
    for i in 0..count {
        let mut r = rng::derived_rng(seed, rng::stream::SEQUENCE, i as u64);
        let xs: Vec<usize> = (0..=spec.n_examples).map(|_| r.random_range(0..=x_max)).collect();
        a.push(xs.iter().flat_map(|&x| [x, x + ka]).collect());
        b.push(xs.iter().flat_map(|&x| [x, x + kb]).collect());
    }
    let make = |seqs, task, k| SequenceBatch {
        sequences: Sequences::Tokens(seqs),
        task_ids: vec![task; count],
        params: vec![TaskParam::Offset(k); count],
        directions: vec![None; count],
        seed,
    };
    Ok((make(a, task_a, ka), make(b, task_b, kb)))
}

fn require_count(count: usize) -> Result<()> {
    if count == 0 {
        return Err(LabError::InvalidArgument("batch count must be at least 1".into()));
    }
    Ok(())
}
