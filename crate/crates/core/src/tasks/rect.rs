// SPDX-License-Identifier: MIT OR Apache-2.0

//! Rectangle trajectories: walks along a grid of boundary points of an
//! axis-aligned rectangle centred at the origin.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Direction, SequenceBatch, Sequences, TaskParam};
use crate::error::{LabError, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectSpec {
    /// Points per edge, corners included and shared between edges.
    pub points_per_edge: usize,
    /// Points per trajectory.
    pub n: usize,
    /// Training side lengths `(a, b)`.
    pub sides: Vec<(f64, f64)>,
}

impl RectSpec {
    pub fn new(points_per_edge: usize, n: usize, sides: Vec<(f64, f64)>) -> Result<Self> {
        if points_per_edge < 2 || n < 1 {
            return Err(LabError::InvalidArgument(format!(
                "rectangle needs e >= 2 and n >= 1 (got e = {points_per_edge}, n = {n})"
            )));
        }
        Ok(Self {
            points_per_edge,
            n,
            sides,
        })
    }
}

/// The `4(e − 1)` boundary points of the `a × b` rectangle, counter-clockwise
/// from the bottom-right corner. Indices `0..e` form the right edge.
pub fn boundary_loop(a: f64, b: f64, e: usize) -> Result<Vec<[f64; 2]>> {
    if !(a > 0.0) || !(b > 0.0) {
        return Err(LabError::InvalidArgument(format!("rectangle sides must be positive: ({a}, {b})")));
    }
    if e < 2 {
        return Err(LabError::InvalidArgument("need at least 2 points per edge".into()));
    }
    let (ha, hb) = (a / 2.0, b / 2.0);
    let seg = (e - 1) as f64;
    let mut pts = Vec::with_capacity(4 * (e - 1));
    for k in 0..e - 1 {
        pts.push([ha, -hb + b * k as f64 / seg]);
    }
    for k in 0..e - 1 {
        pts.push([ha - a * k as f64 / seg, hb]);
    }
    for k in 0..e - 1 {
        pts.push([-ha, hb - b * k as f64 / seg]);
    }
    for k in 0..e - 1 {
        pts.push([-ha + a * k as f64 / seg, -hb]);
    }
    Ok(pts)
}

/// `n` consecutive loop points starting at `start` (an index into
/// [`boundary_loop`]) and moving in `direction`.
pub fn walk(a: f64, b: f64, e: usize, n: usize, start: usize, direction: Direction) -> Result<Vec<[f64; 2]>> {
    let pts = boundary_loop(a, b, e)?;
    let len = pts.len();
    let step = match direction {
        Direction::Ccw => 1,
        Direction::Cw => len - 1,
    };
    Ok((0..n).map(|i| pts[(start + i * step) % len]).collect())
}

/// `count` trajectories on the `a × b` rectangle, each starting at a uniform
/// right-edge point.
pub fn gen_rect(
    spec: &RectSpec,
    a: f64,
    b: f64,
    direction: Option<Direction>,
    count: usize,
    seed: u64,
) -> Result<SequenceBatch> {
    boundary_loop(a, b, spec.points_per_edge)?;
    if count == 0 {
        return Err(LabError::InvalidArgument("batch count must be at least 1".into()));
    }
    let mut seqs = Vec::with_capacity(count);
    let mut directions = Vec::with_capacity(count);
    for i in 0..count {
        let mut r = rng::derived_rng(seed, rng::stream::SEQUENCE, i as u64);
        let (seq, dir) = sample_walk(spec, a, b, direction, &mut r)?;
        seqs.push(seq);
        directions.push(Some(dir));
    }
    let task = spec.sides.iter().position(|&s| s == (a, b)).unwrap_or(usize::MAX);
    Ok(SequenceBatch {
        sequences: Sequences::Points(seqs),
        task_ids: vec![task; count],
        params: vec![TaskParam::Sides { a, b }; count],
        directions,
        seed,
    })
}

fn sample_walk(
    spec: &RectSpec,
    a: f64,
    b: f64,
    direction: Option<Direction>,
    rng: &mut impl Rng,
) -> Result<(Vec<[f64; 2]>, Direction)> {
    let start = rng.random_range(0..spec.points_per_edge);
    let dir = if rng.random_bool(0.5) { Direction::Ccw } else { Direction::Cw };
    let dir = direction.unwrap_or(dir);
    Ok((walk(a, b, spec.points_per_edge, spec.n, start, dir)?, dir))
}

/// Training batch: `(a, b)` drawn uniformly from the spec's sides per row.
pub fn gen_rect_mixed(spec: &RectSpec, count: usize, seed: u64) -> Result<SequenceBatch> {
    if spec.sides.is_empty() || count == 0 {
        return Err(LabError::InvalidArgument("need side pairs and a positive count".into()));
    }
    let mut seqs = Vec::with_capacity(count);
    let mut task_ids = Vec::with_capacity(count);
    let mut params = Vec::with_capacity(count);
    let mut directions = Vec::with_capacity(count);
    for i in 0..count {
        let mut r = rng::derived_rng(seed, rng::stream::SEQUENCE, i as u64);
        let task = r.random_range(0..spec.sides.len());
        let (a, b) = spec.sides[task];
        let (seq, dir) = sample_walk(spec, a, b, None, &mut r)?;
        seqs.push(seq);
        task_ids.push(task);
        params.push(TaskParam::Sides { a, b });
        directions.push(Some(dir));
    }
    Ok(SequenceBatch {
        sequences: Sequences::Points(seqs),
        task_ids,
        params,
        directions,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loop_has_shared_corners() {
        let pts = boundary_loop(2.0, 4.0, 5).unwrap();
        assert_eq!(pts.len(), 16);
        assert_eq!(pts[0], [1.0, -2.0]);
        assert_eq!(pts[4], [1.0, 2.0]);
        assert_eq!(pts[8], [-1.0, 2.0]);
        assert_eq!(pts[12], [-1.0, -2.0]);
        for (i, p) in pts.iter().enumerate() {
            for q in &pts[i + 1..] {
                assert_ne!(p, q);
            }
        }
    }

    #[test]
    fn fifteen_point_walk_visits_consecutive_points() {
        let pts = boundary_loop(3.0, 1.5, 5).unwrap();
        let w = walk(3.0, 1.5, 5, 15, 2, Direction::Ccw).unwrap();
        assert_eq!(w.len(), 15);
        for (i, p) in w.iter().enumerate() {
            assert_eq!(*p, pts[(2 + i) % 16]);
        }
    }

    #[test]
    fn clockwise_from_top_right_mirrors_ccw_from_bottom_right() {
        let cw = walk(2.0, 2.0, 5, 15, 4, Direction::Cw).unwrap();
        let ccw = walk(2.0, 2.0, 5, 15, 0, Direction::Ccw).unwrap();
        for (p, q) in cw.iter().zip(&ccw) {
            assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] + q[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_sides_rejected() {
        let spec = RectSpec::new(5, 15, vec![]).unwrap();
        assert!(gen_rect(&spec, 0.0, 1.0, None, 1, 0).is_err());
        assert!(gen_rect(&spec, 1.0, -2.0, None, 1, 0).is_err());
        assert!(RectSpec::new(1, 15, vec![]).is_err());
    }
}
