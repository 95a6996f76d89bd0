// SPDX-License-Identifier: MIT OR Apache-2.0

//! Circle trajectories: points on a radius-`r` circle rotated by piecewise
//! constant step sizes.

use std::f64::consts::{FRAC_PI_2, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Direction, SequenceBatch, Sequences, TaskParam};
use crate::error::{LabError, Result};
use crate::rng;

/// Periods a trajectory may use.
pub const PERIODS: [usize; 3] = [2, 3, 4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleSpec {
    /// Number of steps; a trajectory holds `n + 1` points. Must be `12m + 1`.
    pub n: usize,
    /// Training radii, ascending.
    pub radii: Vec<f64>,
}

impl CircleSpec {
    pub fn new(n: usize, radii: Vec<f64>) -> Result<Self> {
        if n % 12 != 1 {
            return Err(LabError::InvalidArgument(format!("circle length n = {n} is not 12m + 1")));
        }
        if let Some(r) = radii.iter().find(|&&r| !(r > 0.0)) {
            return Err(LabError::InvalidArgument(format!("radius {r} must be positive")));
        }
        Ok(Self { n, radii })
    }
}

/// One sampled trajectory and the latent quantities that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct CircleTrajectory {
    pub radius: f64,
    pub start_angle: f64,
    pub period: usize,
    pub direction: Direction,
    /// Step sizes `a₁ … a_n`, constant within each period block.
    pub steps: Vec<f64>,
    /// Angles `θ₁ … θ_n`.
    pub angles: Vec<f64>,
    /// Points `x₁ … x_{n+1}`.
    pub points: Vec<[f64; 2]>,
}

impl CircleTrajectory {
    /// Builds the trajectory from one step size per period block.
    ///
    /// Step `i` (1-based) uses `block_steps[(i − 1) / period]`;
    /// `θ_i = θ₀ + c·(2π/n)·Σ_{j≤i} a_j`, `x₁ = r(cos θ₀, sin θ₀)` and
    /// `x_{i+1} = r(cos θ_i, sin θ_i)`.
    pub fn from_blocks(
        radius: f64,
        start_angle: f64,
        period: usize,
        direction: Direction,
        n: usize,
        block_steps: &[f64],
    ) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(LabError::InvalidArgument(format!("radius {radius} must be positive")));
        }
        if period == 0 || block_steps.len() < n.div_ceil(period) {
            return Err(LabError::InvalidArgument(format!(
                "{} block steps cannot cover {n} steps of period {period}",
                block_steps.len()
            )));
        }
        let steps: Vec<f64> = (0..n).map(|i| block_steps[i / period]).collect();
        let c = direction.sign();
        let unit = TAU / n as f64;
        let mut angles = Vec::with_capacity(n);
        let mut cumulative = 0.0;
        for a in &steps {
            cumulative += a;
            angles.push(start_angle + c * unit * cumulative);
        }
        let point = |theta: f64| [radius * theta.cos(), radius * theta.sin()];
        let points = std::iter::once(start_angle)
            .chain(angles.iter().copied())
            .map(point)
            .collect();
        Ok(Self {
            radius,
            start_angle,
            period,
            direction,
            steps,
            angles,
            points,
        })
    }

    /// Samples θ₀ ∈ [0, π/2], p ∈ {2,3,4}, ⌊n/p⌋+1 step sizes in [0, 1] and,
    /// unless fixed, the direction.
    pub fn sample(radius: f64, n: usize, direction: Option<Direction>, rng: &mut impl Rng) -> Result<Self> {
        let start_angle = rng.random_range(0.0..=FRAC_PI_2);
        let period = PERIODS[rng.random_range(0..PERIODS.len())];
        let dir = if rng.random_bool(0.5) { Direction::Ccw } else { Direction::Cw };
        let direction = direction.unwrap_or(dir);
        let blocks: Vec<f64> = (0..n / period + 1).map(|_| rng.random_range(0.0..=1.0)).collect();
        Self::from_blocks(radius, start_angle, period, direction, n, &blocks)
    }
}

/// `count` trajectories of radius `radius`.
pub fn gen_circle(
    spec: &CircleSpec,
    radius: f64,
    direction: Option<Direction>,
    count: usize,
    seed: u64,
) -> Result<SequenceBatch> {
    if !(radius > 0.0) {
        return Err(LabError::InvalidArgument(format!("radius {radius} must be positive")));
    }
    if count == 0 {
        return Err(LabError::InvalidArgument("batch count must be at least 1".into()));
    }
    let mut seqs = Vec::with_capacity(count);
    let mut directions = Vec::with_capacity(count);
    for i in 0..count {
        let mut r = rng::derived_rng(seed, rng::stream::SEQUENCE, i as u64);
        let t = CircleTrajectory::sample(radius, spec.n, direction, &mut r)?;
        directions.push(Some(t.direction));
        seqs.push(t.points);
    }
    let task = spec.radii.iter().position(|&r| r == radius).unwrap_or(usize::MAX);
    Ok(SequenceBatch {
        sequences: Sequences::Points(seqs),
        task_ids: vec![task; count],
        params: vec![TaskParam::Radius(radius); count],
        directions,
        seed,
    })
}

/// Training batch: radius drawn uniformly from the spec's radii per row.
pub fn gen_circle_mixed(spec: &CircleSpec, count: usize, seed: u64) -> Result<SequenceBatch> {
    if spec.radii.is_empty() || count == 0 {
        return Err(LabError::InvalidArgument("need radii and a positive count".into()));
    }
    let mut seqs = Vec::with_capacity(count);
    let mut task_ids = Vec::with_capacity(count);
    let mut params = Vec::with_capacity(count);
    let mut directions = Vec::with_capacity(count);
    for i in 0..count {
        let mut r = rng::derived_rng(seed, rng::stream::SEQUENCE, i as u64);
        let task = r.random_range(0..spec.radii.len());
        let t = CircleTrajectory::sample(spec.radii[task], spec.n, None, &mut r)?;
        task_ids.push(task);
        params.push(TaskParam::Radius(spec.radii[task]));
        directions.push(Some(t.direction));
        seqs.push(t.points);
    }
    Ok(SequenceBatch {
        sequences: Sequences::Points(seqs),
        task_ids,
        params,
        directions,
        seed,
    })
}
