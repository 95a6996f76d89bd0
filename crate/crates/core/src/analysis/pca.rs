// SPDX-License-Identifier: MIT OR Apache-2.0

//! Principal components of a set of vectors, plus ordering checks on the
//! projections.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numeric::{symmetric_eigen, Tensor};

/// Mean-centered PCA of `n` vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaReport {
    pub n_components: usize,
    /// Leading eigenvalues of the covariance (divided by `n`), descending.
    pub eigenvalues: Vec<f64>,
    /// `λᵢ / Σ λ` over the full spectrum.
    pub variance_fractions: Vec<f64>,
    /// Principal axes, unit length, one per component.
    pub components: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Coordinates of every input vector along the components.
    pub projections: Vec<Vec<f64>>,
}

impl PcaReport {
    /// Fraction of variance captured by the first `k` components.
    pub fn cumulative(&self, k: usize) -> f64 {
        self.variance_fractions.iter().take(k).sum()
    }

    /// Coordinate `c` of every projected vector.
    pub fn coordinate(&self, c: usize) -> Vec<f64> {
        self.projections.iter().map(|p| p[c]).collect()
    }
}

/// PCA with `n_components` components.
///
/// When there are fewer vectors than dimensions the spectrum is taken from
/// the `n × n` Gram matrix of the centered data, which has the same non-zero
/// eigenvalues as the covariance.
pub fn pca(vectors: &[Vec<f64>], n_components: usize) -> Result<PcaReport> {
    let n = vectors.len();
    if n < 2 {
        return Err(LabError::InvalidArgument("PCA needs at least two vectors".into()));
    }
    let d = vectors[0].len();
    if d == 0 || vectors.iter().any(|v| v.len() != d) {
        return Err(LabError::InvalidArgument("PCA vectors must share a non-zero width".into()));
    }
    if n_components == 0 || n_components > n.min(d) {
        return Err(LabError::InvalidArgument(format!(
            "cannot extract {n_components} components from {n} vectors of width {d}"
        )));
    }
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<f64> = vectors
        .iter()
        .flat_map(|v| v.iter().zip(&mean).map(|(x, m)| x - m))
        .collect();
    let x = Tensor::new([n, d], centered)?;

    let (values, components) = if n < d {
        let gram = x.matmul(&x.transpose()?)?;
        let gram = Tensor::new([n, n], gram.data().iter().map(|g| g / n as f64).collect())?;
        let eig = symmetric_eigen(&gram)?;
        let mut comps = Vec::with_capacity(n_components);
        for i in 0..n_components {
            let u = eig.vector(i);
            let mut axis = vec![0.0; d];
            for (r, &ur) in u.iter().enumerate() {
                for (a, xv) in axis.iter_mut().zip(x.row(r)) {
                    *a += ur * xv;
                }
            }
            let norm = axis.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 0.0 {
                axis.iter_mut().for_each(|a| *a /= norm);
            }
            comps.push(axis);
        }
        (eig.values, comps)
    } else {
        let cov = x.t_matmul(&x)?;
        let cov = Tensor::new([d, d], cov.data().iter().map(|c| c / n as f64).collect())?;
        let eig = symmetric_eigen(&cov)?;
        let comps = (0..n_components).map(|i| eig.vector(i)).collect();
        (eig.values, comps)
    };
    let values: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let fractions = values
        .iter()
        .take(n_components)
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    let projections = (0..n)
        .map(|r| {
            components
                .iter()
                .map(|c: &Vec<f64>| c.iter().zip(x.row(r)).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    Ok(PcaReport {
        n_components,
        eigenvalues: values.into_iter().take(n_components).collect(),
        variance_fractions: fractions,
        components,
        mean,
        projections,
    })
}

/// Ranks starting at 1; tied values share their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(LabError::InvalidArgument("spearman needs two equal-length series of length >= 2".into()));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingVerdict {
    pub rho: f64,
    /// `|ρ| = 1`: the coordinate orders the parameters exactly (either sign).
    pub preserved: bool,
}

/// Spearman correlation between the first principal coordinate and a scalar
/// task parameter.
pub fn ordering_check(report: &PcaReport, params: &[f64]) -> Result<OrderingVerdict> {
    if params.len() != report.projections.len() {
        return Err(LabError::InvalidArgument(format!(
            "{} parameters for {} projected vectors",
            params.len(),
            report.projections.len()
        )));
    }
    let mut sorted = params.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(LabError::InvalidArgument("ordering check needs distinct parameters".into()));
    }
    let rho = spearman(&report.coordinate(0), params)?;
    Ok(OrderingVerdict {
        rho,
        preserved: (rho.abs() - 1.0).abs() < 1e-12,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainVerdict {
    /// Visiting order, as indices into the input.
    pub chain: Vec<usize>,
    pub preserved: bool,
}

/// Greedy nearest-neighbour walk over `points`, starting from the point with
/// the smallest parameter. The order is preserved when the walk visits the
/// points in ascending parameter order.
pub fn nearest_neighbor_chain(points: &[Vec<f64>], params: &[f64]) -> Result<ChainVerdict> {
    if points.len() != params.len() || points.is_empty() {
        return Err(LabError::InvalidArgument("need one parameter per point".into()));
    }
    let mut order: Vec<usize> = (0..params.len()).collect();
    order.sort_by(|&a, &b| params[a].total_cmp(&params[b]));
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut visited = vec![false; points.len()];
    let mut chain = vec![order[0]];
    visited[order[0]] = true;
    while chain.len() < points.len() {
        let cur = &points[*chain.last().expect("non-empty")];
        let next = (0..points.len())
            .filter(|&i| !visited[i])
            .min_by(|&a, &b| dist(cur, &points[a]).total_cmp(&dist(cur, &points[b])))
            .expect("unvisited point");
        visited[next] = true;
        chain.push(next);
    }
    let preserved = chain == order;
    Ok(ChainVerdict { chain, preserved })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn embed(coords: &[[f64; 2]], d: usize) -> Vec<Vec<f64>> {
        // Two fixed orthonormal directions in R^d.
        let mut u = vec![0.0; d];
        let mut w = vec![0.0; d];
        u[3] = 0.6;
        u[7] = 0.8;
        w[3] = -0.8;
        w[7] = 0.6;
        coords
            .iter()
            .map(|c| (0..d).map(|i| 1.5 + c[0] * u[i] + c[1] * w[i]).collect())
            .collect()
    }

    #[test]
    fn collinear_points_have_one_component() {
        let pts = embed(&[[0.0, 0.0], [1.0, 0.0], [3.0, 0.0], [7.0, 0.0]], 128);
        let r = pca(&pts, 2).unwrap();
        assert!((r.variance_fractions[0] - 1.0).abs() < 1e-12);
        assert!(r.variance_fractions[1].abs() < 1e-12);
    }

    #[test]
    fn grid_has_two_components() {
        let grid: Vec<[f64; 2]> = (0..3).flat_map(|i| (0..3).map(move |j| [i as f64, 2.0 * j as f64])).collect();
        let r = pca(&embed(&grid, 128), 3).unwrap();
        assert!((r.cumulative(2) - 1.0).abs() < 1e-12);
        assert!(r.variance_fractions[0] >= r.variance_fractions[1]);
    }

    #[test]
    fn gram_and_covariance_paths_agree() {
        let pts: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..4).map(|j| ((i * i * 7 + j * j * 3 + i * j) as f64).sin()).collect())
            .collect();
        // n = 6 > d = 4 uses the covariance; the transposed-width copy uses Gram.
        let wide: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().chain(&[0.0; 8]).copied().collect()).collect();
        let a = pca(&pts, 3).unwrap();
        let b = pca(&wide, 3).unwrap();
        for i in 0..3 {
            assert!((a.eigenvalues[i] - b.eigenvalues[i]).abs() < 1e-10);
            for (p, q) in a.coordinate(i).iter().zip(b.coordinate(i)) {
                assert!((p.abs() - q.abs()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn too_many_components_rejected() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert!(pca(&pts, 3).is_err());
        assert!(pca(&pts[..1], 1).is_err());
    }

    #[test]
    fn ordering_is_sign_agnostic() {
        let pts = embed(&[[0.0, 0.0], [1.0, 0.1], [2.0, 0.0], [3.0, 0.2]], 16);
        let r = pca(&pts, 1).unwrap();
        let v = ordering_check(&r, &[1.0, 4.0, 7.0, 10.0]).unwrap();
        assert!(v.preserved);
        let v = ordering_check(&r, &[10.0, 7.0, 4.0, 1.0]).unwrap();
        assert!(v.preserved);
        let v = ordering_check(&r, &[1.0, 7.0, 4.0, 10.0]).unwrap();
        assert!(!v.preserved);
        assert!((v.rho.abs() - 0.8).abs() < 1e-12);
        assert!(ordering_check(&r, &[1.0, 1.0, 4.0, 10.0]).is_err());
    }

    #[test]
    fn chain_follows_an_arc() {
        let pts: Vec<Vec<f64>> = (0..8)
            .map(|i| {
                let a = i as f64 * 0.3;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let params: Vec<f64> = (0..8).map(|i| 1.0 + i as f64).collect();
        assert!(nearest_neighbor_chain(&pts, &params).unwrap().preserved);
        let mut swapped = params.clone();
        swapped.swap(3, 5);
        assert!(!nearest_neighbor_chain(&pts, &swapped).unwrap().preserved);
    }
}
