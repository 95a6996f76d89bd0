// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation patching and task-vector steering.
//!
//! Patching runs a donor ("alternative") batch, caches its activations at a
//! site, and substitutes them into the recipient ("normal") batch. The
//! logit-difference metrics are
//!
//! ```text
//! Δ_norm     = E[ logit(p_norm)[T_norm] − logit(p_norm)[T_alt] ]
//! Δ_alt→norm = same expectation on the patched run
//! Δ̄          = (Δ_norm − Δ_alt→norm) / Δ_norm
//! ```
//!
//! Expectations are sample means summed in ascending sample order.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analysis::TaskVector;
use crate::error::{LabError, Result};
use crate::model::{self, Intervention, ModelConfig, ModelParams, Prediction, Site};
use crate::tasks::{SequenceBatch, TaskParam};
use crate::train::token_rank;

/// `|Δ_norm|` below this leaves `Δ̄` undefined.
pub const DELTA_EPS: f64 = 1e-9;

/// `1 / (1 + rank)`, where rank counts tokens with a strictly greater logit
/// plus equal logits at a lower index.
pub fn reciprocal_rank(logits: &[f64], token: usize) -> Result<f64> {
    if token >= logits.len() {
        return Err(LabError::InvalidArgument(format!(
            "token {token} outside vocabulary of {}",
            logits.len()
        )));
    }
    Ok(1.0 / (1 + token_rank(logits, token)) as f64)
}

/// `(Δ_norm − Δ_alt→norm) / Δ_norm`, or `None` when `|Δ_norm| < 1e-9`.
pub fn logit_diff_variation(delta_norm: f64, delta_patched: f64) -> Option<f64> {
    (delta_norm.abs() >= DELTA_EPS).then(|| (delta_norm - delta_patched) / delta_norm)
}

/// What gets written into the site.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    /// The donor batch's own activation, row-aligned with the recipient.
    Donor,
    /// One vector shared by every sequence.
    Vector(Vec<f64>),
    /// `(1 − β)·a + β·b`.
    Interpolate { a: Vec<f64>, b: Vec<f64>, beta: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterventionSpec {
    pub site: Site,
    pub positions: Vec<usize>,
    pub payload: Payload,
    /// Multiplier on the payload.
    pub scale: f64,
}

impl InterventionSpec {
    pub fn new(site: Site, positions: Vec<usize>, payload: Payload) -> Self {
        Self {
            site,
            positions,
            payload,
            scale: 1.0,
        }
    }

    fn validate(&self, config: &ModelConfig) -> Result<()> {
        self.site.validate(config)?;
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(LabError::InvalidArgument(format!("scale {} must be positive", self.scale)));
        }
        if self.positions.is_empty() {
            return Err(LabError::InvalidArgument("intervention needs at least one position".into()));
        }
        if let Payload::Interpolate { beta, a, b } = &self.payload {
            if !(0.0..=1.0).contains(beta) {
                return Err(LabError::InvalidArgument(format!("β = {beta} outside [0, 1]")));
            }
            if a.len() != b.len() {
                return Err(LabError::shape("interpolate", &[a.len()], &[b.len()]));
            }
        }
        Ok(())
    }

    /// Concrete model interventions, reading donor rows when needed.
    pub fn resolve(
        &self,
        params: &ModelParams,
        config: &ModelConfig,
        donor: Option<&SequenceBatch>,
    ) -> Result<Vec<Intervention>> {
        self.validate(config)?;
        let scaled = |v: &[f64]| -> Vec<f64> {
            if self.scale == 1.0 {
                v.to_vec()
            } else {
                v.iter().map(|x| x * self.scale).collect()
            }
        };
        match &self.payload {
            Payload::Donor => {
                let donor = donor.ok_or_else(|| LabError::InvalidArgument("donor payload needs a donor batch".into()))?;
                let fwd = model::forward(params, config, &donor.model_input()?, &[self.site], &[])?;
                let trace = fwd.trace.expect("trace requested");
                self.positions
                    .iter()
                    .map(|&p| {
                        let rows = trace.rows_at(self.site, p)?.iter().map(|r| scaled(r)).collect();
                        Ok(Intervention::per_sequence(self.site, p, rows))
                    })
                    .collect()
            }
            Payload::Vector(v) => Ok(self
                .positions
                .iter()
                .map(|&p| Intervention::shared(self.site, p, scaled(v)))
                .collect()),
            Payload::Interpolate { a, b, beta } => {
                let v = interpolate(a, b, *beta);
                Ok(self
                    .positions
                    .iter()
                    .map(|&p| Intervention::shared(self.site, p, scaled(&v)))
                    .collect())
            }
        }
    }
}

/// `(1 − β)·a + β·b`, element-wise.
pub fn interpolate(a: &[f64], b: &[f64], beta: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (1.0 - beta) * x + beta * y).collect()
}

/// Per-sample patching outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSample {
    pub t_norm: usize,
    pub t_alt: usize,
    pub diff_norm: f64,
    pub diff_patched: f64,
    pub rr_norm_before: f64,
    pub rr_alt_before: f64,
    pub rr_norm_after: f64,
    pub rr_alt_after: f64,
    pub argmax_before: usize,
    pub argmax_after: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchReport {
    pub delta_norm: f64,
    pub delta_alt_to_norm: f64,
    /// `None` when `|Δ_norm| < 1e-9`.
    pub delta_bar: Option<f64>,
    pub mean_rr_norm_before: f64,
    pub mean_rr_alt_before: f64,
    pub mean_rr_norm_after: f64,
    pub mean_rr_alt_after: f64,
    /// Fraction of samples whose patched argmax is `T_alt`.
    pub flip_rate: f64,
    pub samples: Vec<PatchSample>,
}

impl PatchReport {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "sample,t_norm,t_alt,diff_norm,diff_patched,rr_norm_before,rr_alt_before,rr_norm_after,rr_alt_after,argmax_before,argmax_after"
        )?;
        for (i, s) in self.samples.iter().enumerate() {
            writeln!(
                w,
                "{i},{},{},{},{},{},{},{},{},{},{}",
                s.t_norm,
                s.t_alt,
                s.diff_norm,
                s.diff_patched,
                s.rr_norm_before,
                s.rr_alt_before,
                s.rr_norm_after,
                s.rr_alt_after,
                s.argmax_before,
                s.argmax_after
            )?;
        }
        Ok(())
    }
}

fn token_logits(preds: Vec<Prediction>) -> Result<Vec<Vec<f64>>> {
    preds
        .into_iter()
        .map(|p| match p {
            Prediction::Token { logits, .. } => Ok(logits),
            Prediction::Point(_) => Err(LabError::InvalidArgument("patching needs a token model".into())),
        })
        .collect()
}

/// Patches `spec` into the normal batch and scores the answer position.
///
/// `T_norm` and `T_alt` are the final answers of the normal and alternative
/// batches, which must be aligned one-to-one.
pub fn patch_run(
    params: &ModelParams,
    config: &ModelConfig,
    normal: &SequenceBatch,
    alt: &SequenceBatch,
    spec: &InterventionSpec,
) -> Result<PatchReport> {
    if normal.len() != alt.len() || normal.input_len() != alt.input_len() {
        return Err(LabError::InvalidArgument("normal and alternative batches are not aligned".into()));
    }
    let (t_norm, t_alt) = match (normal.answers(), alt.answers()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(LabError::InvalidArgument("patching needs token batches".into())),
    };
    let vocab = config.variant.output_width();
    if let Some(t) = t_norm.iter().chain(&t_alt).find(|&&t| t >= vocab) {
        return Err(LabError::InvalidArgument(format!("answer {t} outside vocabulary of {vocab}")));
    }
    let interventions = spec.resolve(params, config, Some(alt))?;
    let input = normal.model_input()?;
    let pos = normal.answer_position();
    let before = token_logits(model::predict_at(params, config, &input, pos, &[])?)?;
    let after = token_logits(model::predict_at(params, config, &input, pos, &interventions)?)?;

    let mut samples = Vec::with_capacity(normal.len());
    for i in 0..normal.len() {
        let (b, a) = (&before[i], &after[i]);
        let (tn, ta) = (t_norm[i], t_alt[i]);
        samples.push(PatchSample {
            t_norm: tn,
            t_alt: ta,
            diff_norm: b[tn] - b[ta],
            diff_patched: a[tn] - a[ta],
            rr_norm_before: reciprocal_rank(b, tn)?,
            rr_alt_before: reciprocal_rank(b, ta)?,
            rr_norm_after: reciprocal_rank(a, tn)?,
            rr_alt_after: reciprocal_rank(a, ta)?,
            argmax_before: model::argmax(b),
            argmax_after: model::argmax(a),
        });
    }
    let n = samples.len() as f64;
    let mean = |f: &dyn Fn(&PatchSample) -> f64| samples.iter().map(f).sum::<f64>() / n;
    let delta_norm = mean(&|s| s.diff_norm);
    let delta_alt_to_norm = mean(&|s| s.diff_patched);
    Ok(PatchReport {
        delta_norm,
        delta_alt_to_norm,
        delta_bar: logit_diff_variation(delta_norm, delta_alt_to_norm),
        mean_rr_norm_before: mean(&|s| s.rr_norm_before),
        mean_rr_alt_before: mean(&|s| s.rr_alt_before),
        mean_rr_norm_after: mean(&|s| s.rr_norm_after),
        mean_rr_alt_after: mean(&|s| s.rr_alt_after),
        flip_rate: mean(&|s| f64::from(u8::from(s.argmax_after == s.t_alt))),
        samples,
    })
}

/// Accuracies against one reference label set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub top1: f64,
    pub top3: f64,
}

/// Steering metrics at one β.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SteerMetrics {
    Token {
        /// Offset the target labels were built from (rounded half to even).
        target_offset: usize,
        original: Accuracy,
        opposite: Accuracy,
        target: Accuracy,
        /// Mean predicted label (argmax) over the batch.
        mean_prediction: f64,
    },
    Radius {
        target_radius: f64,
        mse_original: f64,
        mse_opposite: f64,
        mse_target: f64,
        mean_radius: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteerRow {
    pub beta: f64,
    /// `(1 − β)·param_a + β·param_b` before rounding.
    pub target: f64,
    pub metrics: SteerMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteerReport {
    pub original: TaskParam,
    pub opposite: TaskParam,
    pub site: Site,
    pub position: usize,
    pub rows: Vec<SteerRow>,
}

impl SteerReport {
    /// One row per `(β, metric, reference)`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "beta,metric,reference,value")?;
        for r in &self.rows {
            match &r.metrics {
                SteerMetrics::Token {
                    original,
                    opposite,
                    target,
                    ..
                } => {
                    for (name, acc) in [("original", original), ("opposite", opposite), ("target", target)] {
                        writeln!(w, "{},top1,{name},{}", r.beta, acc.top1)?;
                        writeln!(w, "{},top3,{name},{}", r.beta, acc.top3)?;
                    }
                }
                SteerMetrics::Radius {
                    mse_original,
                    mse_opposite,
                    mse_target,
                    ..
                } => {
                    writeln!(w, "{},radius_mse,original,{mse_original}", r.beta)?;
                    writeln!(w, "{},radius_mse,opposite,{mse_opposite}", r.beta)?;
                    writeln!(w, "{},radius_mse,target,{mse_target}", r.beta)?;
                }
            }
        }
        Ok(())
    }
}

/// `{0, 0.1, …, 1}`.
pub fn default_betas() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Round half to even, for non-negative values.
pub fn round_half_even(x: f64) -> f64 {
    let r = x.round();
    if (x - x.trunc()).abs() == 0.5 && r % 2.0 != 0.0 {
        r - x.signum()
    } else {
        r
    }
}

/// Steers `batch` (drawn from `t_a`'s task) with `(1 − β)·t_a + β·t_b` at the
/// vectors' site and position, for every β.
pub fn steer(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &SequenceBatch,
    t_a: &TaskVector,
    t_b: &TaskVector,
    betas: &[f64],
) -> Result<SteerReport> {
    if t_a.site != t_b.site || t_a.position != t_b.position {
        return Err(LabError::InvalidSite(format!(
            "task vectors taken at different places: {}@{} vs {}@{}",
            t_a.site, t_a.position, t_b.site, t_b.position
        )));
    }
    let (pa, pb) = match (t_a.param.scalar(), t_b.param.scalar()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(LabError::InvalidArgument("steering needs scalar task parameters".into())),
    };
    let input = batch.model_input()?;
    let mut rows = Vec::with_capacity(betas.len());
    for &beta in betas {
        let spec = InterventionSpec::new(
            t_a.site,
            vec![t_a.position],
            Payload::Interpolate {
                a: t_a.vector.clone(),
                b: t_b.vector.clone(),
                beta,
            },
        );
        let ivs = spec.resolve(params, config, None)?;
        let target = (1.0 - beta) * pa + beta * pb;
        let metrics = if batch.is_tokens() {
            let preds = token_logits(model::predict_at(params, config, &input, batch.answer_position(), &ivs)?)?;
            let queries = batch.queries().expect("token batch");
            let target_offset = round_half_even(target) as usize;
            let score = |k: usize| -> Result<Accuracy> {
                let (mut t1, mut t3) = (0usize, 0usize);
                for (logits, &x) in preds.iter().zip(&queries) {
                    let y = x + k;
                    if y < logits.len() {
                        let r = token_rank(logits, y);
                        t1 += usize::from(r < 1);
                        t3 += usize::from(r < 3);
                    }
                }
                let n = preds.len() as f64;
                Ok(Accuracy {
                    top1: t1 as f64 / n,
                    top3: t3 as f64 / n,
                })
            };
            let mean_prediction =
                preds.iter().map(|l| model::argmax(l) as f64).sum::<f64>() / preds.len() as f64;
            SteerMetrics::Token {
                target_offset,
                original: score(pa as usize)?,
                opposite: score(pb as usize)?,
                target: score(target_offset)?,
                mean_prediction,
            }
        } else {
            let preds = model::predict_at(params, config, &input, t_a.position, &ivs)?;
            let radii: Vec<f64> = preds
                .iter()
                .map(|p| match p {
                    Prediction::Point(q) => q[0].hypot(q[1]),
                    Prediction::Token { .. } => unreachable!("point model"),
                })
                .collect();
            let n = radii.len() as f64;
            let mse = |r: f64| radii.iter().map(|x| (x - r) * (x - r)).sum::<f64>() / n;
            SteerMetrics::Radius {
                target_radius: target,
                mse_original: mse(pa),
                mse_opposite: mse(pb),
                mse_target: mse(target),
                mean_radius: radii.iter().sum::<f64>() / n,
            }
        };
        rows.push(SteerRow { beta, target, metrics });
    }
    Ok(SteerReport {
        original: t_a.param,
        opposite: t_b.param,
        site: t_a.site,
        position: t_a.position,
        rows,
    })
}
