// SPDX-License-Identifier: MIT OR Apache-2.0

//! Training loop, evaluation and checkpoints.
//!
//! All randomness in a run is derived from `TrainConfig::seed` and the
//! iteration number, so a checkpoint only needs the iteration counter to
//! resume bit-identically.

mod checkpoint;
mod optim;

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use optim::{learning_rate, AdamState, AdamW, OptimizerConfig, OptimizerKind, Schedule};

use crate::error::{LabError, Result};
use crate::model::{self, ModelConfig, ModelParams, Prediction};
use crate::rng;
use crate::tasks::{SequenceBatch, Sequences, TaskFamily};

/// Where training sequences come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataMode {
    /// A fixed pool of `size` sequences sampled with replacement. Pool entry
    /// `j` is regenerated on demand from its own derived seed.
    Fixed { size: usize },
    /// A new batch at every iteration.
    Fresh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub optimizer: OptimizerConfig,
    pub iterations: usize,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub schedule: Schedule,
    pub data: DataMode,
    pub seed: u64,
    /// Evaluate on a held-out batch every this many iterations (0 = never).
    pub eval_every: usize,
    pub eval_size: usize,
}

impl TrainConfig {
    /// add-k: AdamW (lr 1e-3, wd 0.01), 1000 iterations, 10% warmup then
    /// linear decay, batch 500 (2000 above 16 tasks), 500K-sequence pool.
    pub fn addk(num_tasks: usize, seed: u64) -> Self {
        Self {
            optimizer: OptimizerConfig::adamw(1e-3, 0.01),
            iterations: 1000,
            batch_size: if num_tasks <= 16 { 500 } else { 2000 },
            warmup_fraction: 0.1,
            schedule: Schedule::WarmupLinear,
            data: DataMode::Fixed { size: 500_000 },
            seed,
            eval_every: 100,
            eval_size: 500,
        }
    }

    /// Circle and rectangle: Adam (lr 1e-4, wd 1e-3), a fresh batch of 64 at
    /// each of 3125 iterations, constant learning rate.
    pub fn trajectory(seed: u64) -> Self {
        Self {
            optimizer: OptimizerConfig::adam(1e-4, 1e-3),
            iterations: 3125,
            batch_size: 64,
            warmup_fraction: 0.0,
            schedule: Schedule::Constant,
            data: DataMode::Fresh,
            seed,
            eval_every: 250,
            eval_size: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(LabError::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(LabError::Config(format!(
                "warmup_fraction {} outside [0, 1]",
                self.warmup_fraction
            )));
        }
        if let DataMode::Fixed { size: 0 } = self.data {
            return Err(LabError::Config("fixed dataset size must be positive".into()));
        }
        if self.eval_every > 0 && self.eval_size == 0 {
            return Err(LabError::Config("eval_size must be positive".into()));
        }
        Ok(())
    }

    pub fn warmup_iterations(&self) -> usize {
        (self.warmup_fraction * self.iterations as f64).round() as usize
    }

    pub fn lr_at(&self, t: usize) -> f64 {
        learning_rate(
            self.schedule,
            self.optimizer.lr(),
            t,
            self.iterations,
            self.warmup_iterations(),
        )
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
    /// Held-out top-1 accuracy (token models) or MSE (point models), when
    /// evaluated at this iteration.
    pub metric: Option<f64>,
}

/// Writes `iteration,loss,lr,metric` rows.
pub fn write_metric_log(rows: &[MetricRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "iteration,loss,lr,metric")?;
    for r in rows {
        let metric = r.metric.map(|m| m.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{metric}", r.iteration, r.loss, r.lr)?;
    }
    Ok(())
}

/// Drives optimization of one model on one task family.
#[derive(Clone, Debug)]
pub struct Trainer {
    state: Checkpoint,
}

impl Trainer {
    /// Fresh model initialized from `train.seed`.
    pub fn new(model_config: ModelConfig, family: TaskFamily, train: TrainConfig) -> Result<Self> {
        model_config.validate()?;
        train.validate()?;
        let params = ModelParams::init(&model_config, train.seed)?;
        let optimizer = AdamState::new(params.named().iter().map(|(_, t)| t.numel()));
        Ok(Self {
            state: Checkpoint {
                model_config,
                train_config: train,
                family,
                params,
                iteration: 0,
                optimizer,
            },
        })
    }

    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self> {
        checkpoint.train_config.validate()?;
        checkpoint.params.validate(&checkpoint.model_config)?;
        Ok(Self { state: checkpoint })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.state
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.state
    }

    pub fn iteration(&self) -> usize {
        self.state.iteration
    }

    pub fn is_finished(&self) -> bool {
        self.state.iteration >= self.state.train_config.iterations
    }

    /// Training batch of iteration `t`.
    pub fn batch_at(&self, t: usize) -> Result<SequenceBatch> {
        let cfg = &self.state.train_config;
        training_batch(&self.state.family, cfg, t)
    }

    /// One optimization step.
    pub fn step(&mut self) -> Result<MetricRow> {
        let t = self.state.iteration;
        let batch = self.batch_at(t)?;
        let input = batch.model_input()?;
        let targets = batch.loss_targets();
        let diverged = |state: &Checkpoint| LabError::Diverged {
            iteration: t,
            diagnostic: Box::new(state.clone()),
        };
        let (loss, grads) = match model::loss_and_grads(&self.state.params, &self.state.model_config, &input, &targets)
        {
            Ok(v) => v,
            Err(LabError::NonFinite { .. }) => return Err(diverged(&self.state)),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(diverged(&self.state));
        }
        let lr = self.state.train_config.lr_at(t);
        let opt = self.state.train_config.optimizer.resolve();
        let mut slices: Vec<&mut [f64]> = self
            .state
            .params
            .named_mut()
            .into_iter()
            .map(|(_, p)| p.data_mut())
            .collect();
        self.state.optimizer.step(&opt, lr, &mut slices, &grads)?;
        self.state.iteration += 1;

        let cfg = &self.state.train_config;
        let metric = if cfg.eval_every > 0 && (t + 1) % cfg.eval_every == 0 || t + 1 == cfg.iterations {
            let eval = self.state.family.mixed_batch(
                cfg.eval_size.max(1),
                rng::derive_seed(cfg.seed, rng::stream::EVAL, 0),
            )?;
            Some(evaluate(&self.state.params, &self.state.model_config, &eval)?.headline())
        } else {
            None
        };
        Ok(MetricRow {
            iteration: t,
            loss,
            lr,
            metric,
        })
    }

    /// Steps until `iteration == stop` (capped at the configured total).
    pub fn run_until(&mut self, stop: usize, mut on_step: impl FnMut(&MetricRow)) -> Result<Vec<MetricRow>> {
        let stop = stop.min(self.state.train_config.iterations);
        let mut log = Vec::with_capacity(stop.saturating_sub(self.state.iteration));
        while self.state.iteration < stop {
            let row = self.step()?;
            on_step(&row);
            log.push(row);
        }
        Ok(log)
    }
}

/// Trains a fresh model to completion.
pub fn train(model_config: ModelConfig, family: TaskFamily, train: TrainConfig) -> Result<(Checkpoint, Vec<MetricRow>)> {
    let mut trainer = Trainer::new(model_config, family, train)?;
    let total = trainer.checkpoint().train_config.iterations;
    let log = trainer.run_until(total, |_| {})?;
    Ok((trainer.into_checkpoint(), log))
}

/// Continues a checkpoint to its configured iteration count.
pub fn resume(checkpoint: Checkpoint) -> Result<(Checkpoint, Vec<MetricRow>)> {
    let mut trainer = Trainer::from_checkpoint(checkpoint)?;
    let total = trainer.checkpoint().train_config.iterations;
    let log = trainer.run_until(total, |_| {})?;
    Ok((trainer.into_checkpoint(), log))
}

fn training_batch(family: &TaskFamily, cfg: &TrainConfig, t: usize) -> Result<SequenceBatch> {
    match cfg.data {
        DataMode::Fresh => family.mixed_batch(
            cfg.batch_size,
            rng::derive_seed(cfg.seed, rng::stream::TRAIN_BATCH, t as u64),
        ),
        DataMode::Fixed { size } => {
            let mut r = rng::derived_rng(cfg.seed, rng::stream::TRAIN_BATCH, t as u64);
            let parts = (0..cfg.batch_size)
                .map(|_| {
                    let j = r.random_range(0..size) as u64;
                    family.mixed_batch(1, rng::derive_seed(cfg.seed, rng::stream::TRAIN_DATASET, j))
                })
                .collect::<Result<Vec<_>>>()?;
            SequenceBatch::concat(parts)
        }
    }
}

/// Held-out quality of a model on a batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evaluation {
    /// Accuracy at the final answer position.
    Token { top1: f64, top3: f64, count: usize },
    /// Mean squared coordinate error of next-point predictions, overall and
    /// per input position from 1 on.
    Points {
        mse: f64,
        per_position: Vec<f64>,
        count: usize,
    },
}

impl Evaluation {
    /// Top-1 accuracy or MSE.
    pub fn headline(&self) -> f64 {
        match self {
            Evaluation::Token { top1, .. } => *top1,
            Evaluation::Points { mse, .. } => *mse,
        }
    }
}

/// Rank of `target` among `logits` (0 = best), ties broken by lower index.
pub fn token_rank(logits: &[f64], target: usize) -> usize {
    let lt = logits[target];
    logits
        .iter()
        .enumerate()
        .filter(|&(j, &l)| l > lt || (l == lt && j < target))
        .count()
}

const EVAL_CHUNK: usize = 512;

pub fn evaluate(params: &ModelParams, config: &ModelConfig, batch: &SequenceBatch) -> Result<Evaluation> {
    if batch.is_tokens() != config.variant.is_token() {
        return Err(LabError::InvalidArgument(
            "evaluation batch kind does not match the model variant".into(),
        ));
    }
    if batch.is_empty() {
        return Err(LabError::InvalidArgument("empty evaluation batch".into()));
    }
    let chunks: Vec<Vec<usize>> = (0..batch.len())
        .collect::<Vec<_>>()
        .chunks(EVAL_CHUNK)
        .map(<[usize]>::to_vec)
        .collect();
    match &batch.sequences {
        Sequences::Tokens(_) => {
            let (mut top1, mut top3) = (0usize, 0usize);
            for idx in &chunks {
                let sub = batch.subset(idx);
                let answers = sub.answers().expect("token batch");
                let preds = model::predict_at(params, config, &sub.model_input()?, sub.answer_position(), &[])?;
                for (p, &y) in preds.iter().zip(&answers) {
                    let Prediction::Token { logits, .. } = p else { unreachable!() };
                    let rank = token_rank(logits, y);
                    top1 += usize::from(rank < 1);
                    top3 += usize::from(rank < 3);
                }
            }
            let n = batch.len() as f64;
            Ok(Evaluation::Token {
                top1: top1 as f64 / n,
                top3: top3 as f64 / n,
                count: batch.len(),
            })
        }
        Sequences::Points(seqs) => {
            let t = batch.input_len();
            let mut per_position = vec![0.0; t.saturating_sub(1)];
            for idx in &chunks {
                let sub = batch.subset(idx);
                let out = model::forward(params, config, &sub.model_input()?, &[], &[])?;
                for (b, &i) in idx.iter().enumerate() {
                    for p in 1..t {
                        let y = out.at(t, b, p);
                        let target = seqs[i][p + 1];
                        per_position[p - 1] += ((y[0] - target[0]).powi(2) + (y[1] - target[1]).powi(2)) / 2.0;
                    }
                }
            }
            let n = batch.len() as f64;
            per_position.iter_mut().for_each(|v| *v /= n);
            let mse = per_position.iter().sum::<f64>() / per_position.len().max(1) as f64;
            Ok(Evaluation::Points {
                mse,
                per_position,
                count: batch.len(),
            })
        }
    }
}
