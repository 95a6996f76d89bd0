// SPDX-License-Identifier: MIT OR Apache-2.0

//! Linear probes: multinomial logistic regression fit by full-batch gradient
//! descent on standardized features.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::{argmax, Site};
use crate::numeric::Tensor;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub l2: f64,
    pub steps: usize,
    pub lr: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            steps: 2000,
            lr: 0.1,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTarget {
    FinalOutput,
    TaskId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub site: Option<Site>,
    pub target: ProbeTarget,
    pub n_classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// A fitted multinomial logistic regression.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    /// Distinct labels, ascending; class `c` predicts `classes[c]`.
    pub classes: Vec<usize>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `[d × C]`.
    weights: Tensor,
    bias: Vec<f64>,
    /// Penalized training loss before the first step and after every step.
    pub loss_history: Vec<f64>,
}

impl LogisticModel {
    fn standardize(&self, x: &[Vec<f64>]) -> Result<Tensor> {
        standardize(x, &self.mean, &self.scale)
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<usize>> {
        let xs = self.standardize(x)?;
        let logits = xs.matmul(&self.weights)?;
        let c = self.classes.len();
        Ok(logits
            .data()
            .chunks_exact(c)
            .map(|row| {
                let z: Vec<f64> = row.iter().zip(&self.bias).map(|(a, b)| a + b).collect();
                self.classes[argmax(&z)]
            })
            .collect())
    }

    pub fn accuracy(&self, x: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}

fn standardize(x: &[Vec<f64>], mean: &[f64], scale: &[f64]) -> Result<Tensor> {
    let d = mean.len();
    if x.iter().any(|r| r.len() != d) {
        return Err(LabError::InvalidArgument(format!("probe features must have width {d}")));
    }
    let data = x
        .iter()
        .flat_map(|r| r.iter().zip(mean).zip(scale).map(|((v, m), s)| (v - m) / s))
        .collect();
    Tensor::new([x.len(), d], data)
}

/// Fits on every sample (no held-out split).
pub fn fit_logistic(x: &[Vec<f64>], labels: &[usize], config: &ProbeConfig) -> Result<LogisticModel> {
    if x.len() != labels.len() || x.is_empty() {
        return Err(LabError::InvalidArgument("probe needs one label per sample".into()));
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(LabError::InvalidArgument("probe needs at least two classes".into()));
    }
    let d = x[0].len();
    let n = x.len() as f64;
    let mut mean = vec![0.0; d];
    for r in x {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; d];
    for r in x {
        for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    scale.iter_mut().for_each(|s| *s = if *s > 1e-24 { s.sqrt() } else { 1.0 });
    let xs = standardize(x, &mean, &scale)?;
    let c = classes.len();
    let y: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label present"))
        .collect();

    let mut w = Tensor::zeros([d, c]);
    let mut b = vec![0.0; c];
    let mut history = Vec::with_capacity(config.steps + 1);
    for step in 0..=config.steps {
        let logits = xs.matmul(&w)?;
        let mut g = logits.into_data();
        let mut loss = 0.0;
        for (row, &yi) in g.chunks_exact_mut(c).zip(&y) {
            row.iter_mut().zip(&b).for_each(|(z, bb)| *z += bb);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|z| (z - max).exp()).sum();
            loss += total.ln() + max - row[yi];
            for z in row.iter_mut() {
                *z = (*z - max).exp() / total / n;
            }
            row[yi] -= 1.0 / n;
        }
        let wd = w.data();
        let penalty = 0.5 * config.l2 * wd.iter().map(|v| v * v).sum::<f64>();
        history.push(loss / n + penalty);
        if step == config.steps {
            break;
        }
        let g = Tensor::new([x.len(), c], g)?;
        let dw = xs.t_matmul(&g)?;
        let new_w: Vec<f64> = wd
            .iter()
            .zip(dw.data())
            .map(|(wi, gi)| wi - config.lr * (gi + config.l2 * wi))
            .collect();
        for (j, bj) in b.iter_mut().enumerate() {
            let gb: f64 = g.data().iter().skip(j).step_by(c).sum();
            *bj -= config.lr * gb;
        }
        w = Tensor::new([d, c], new_w)?;
    }
    Ok(LogisticModel {
        classes,
        mean,
        scale,
        weights: w,
        bias: b,
        loss_history: history,
    })
}

/// Seeded stratified split: within every class, `round(fraction · n_c)`
/// samples (at least one) go to the test set.
pub fn stratified_split(labels: &[usize], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(LabError::InvalidArgument(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (ci, &c) in classes.iter().enumerate() {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.len() < 2 {
            return Err(LabError::InvalidArgument(format!("class {c} has a single sample")));
        }
        idx.shuffle(&mut rng::derived_rng(seed, rng::stream::PROBE, ci as u64));
        let n_test = ((test_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified split, fit on the training part, accuracy on both parts.
pub fn fit_linear_probe(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    site: Option<Site>,
    target: ProbeTarget,
    config: &ProbeConfig,
) -> Result<ProbeReport> {
    if embeddings.len() != labels.len() {
        return Err(LabError::InvalidArgument("probe needs one label per embedding".into()));
    }
    let (train_idx, test_idx) = stratified_split(labels, config.test_fraction, config.seed)?;
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        (idx.iter().map(|&i| embeddings[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())
    };
    let (xtr, ytr) = pick(&train_idx);
    let (xte, yte) = pick(&test_idx);
    let model = fit_logistic(&xtr, &ytr, config)?;
    Ok(ProbeReport {
        site,
        target,
        n_classes: model.classes.len(),
        n_train: xtr.len(),
        n_test: xte.len(),
        train_accuracy: model.accuracy(&xtr, &ytr)?,
        test_accuracy: model.accuracy(&xte, &yte)?,
        initial_loss: model.loss_history[0],
        final_loss: *model.loss_history.last().expect("history"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cloud(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut r = rng::rng(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let centre = if c == 0 { -2.0 } else { 2.0 };
            x.push((0..5).map(|j| if j == 0 { centre } else { 0.0 } + r.random_range(-0.5..0.5)).collect());
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn separable_clouds_are_fit_perfectly() {
        let (x, y) = cloud(200, 1);
        let cfg = ProbeConfig {
            steps: 200,
            ..Default::default()
        };
        let rep = fit_linear_probe(&x, &y, None, ProbeTarget::TaskId, &cfg).unwrap();
        assert_eq!(rep.test_accuracy, 1.0);
        assert!(rep.final_loss < rep.initial_loss);
        assert_eq!(rep.n_test, 40);
    }

    #[test]
    fn permuted_labels_score_near_chance() {
        let (x, _) = cloud(1000, 2);
        let mut r = rng::rng(3);
        let y: Vec<usize> = (0..1000).map(|_| r.random_range(0..2)).collect();
        let cfg = ProbeConfig {
            steps: 300,
            ..Default::default()
        };
        let rep = fit_linear_probe(&x, &y, None, ProbeTarget::TaskId, &cfg).unwrap();
        let n = rep.n_test as f64;
        let sigma = (0.25 / n).sqrt();
        assert!((rep.test_accuracy - 0.5).abs() < 3.0 * sigma, "{}", rep.test_accuracy);
    }

    #[test]
    fn loss_history_decreases() {
        let (x, y) = cloud(100, 4);
        let m = fit_logistic(&x, &y, &ProbeConfig { steps: 50, ..Default::default() }).unwrap();
        assert_eq!(m.loss_history.len(), 51);
        assert!(m.loss_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!((m.loss_history[0] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let (tr, te) = stratified_split(&labels, 0.2, 9).unwrap();
        assert_eq!(te.len(), 10);
        assert_eq!(tr.len(), 40);
        for c in 0..5 {
            assert_eq!(te.iter().filter(|&&i| labels[i] == c).count(), 2);
        }
        assert!(tr.iter().all(|i| !te.contains(i)));
    }

    #[test]
    fn singleton_class_rejected() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert!(fit_linear_probe(&x, &[0, 0, 1], None, ProbeTarget::TaskId, &ProbeConfig::default()).is_err());
        assert!(fit_logistic(&x, &[0, 0, 0], &ProbeConfig::default()).is_err());
    }
}
