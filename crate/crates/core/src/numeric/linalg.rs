// SPDX-License-Identifier: MIT OR Apache-2.0

//! Covariance and symmetric eigendecomposition (cyclic Jacobi).

use super::Tensor;
use crate::error::{LabError, Result};

/// Symmetry tolerance accepted by [`symmetric_eigen`].
pub const SYMMETRY_TOL: f64 = 1e-9;

const MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Eigenvalues, sorted descending.
    pub values: Vec<f64>,
    /// Eigenvectors as columns of a `d × d` matrix, in the order of `values`.
    pub vectors: Tensor,
}

impl SymmetricEigen {
    /// Column `i` of the eigenvector matrix.
    pub fn vector(&self, i: usize) -> Vec<f64> {
        let d = self.values.len();
        (0..d).map(|r| self.vectors.data()[r * d + i]).collect()
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Sweeps until every off-diagonal element is below `1e-15` times the
/// Frobenius norm, or until the sweep limit.
pub fn symmetric_eigen(cov: &Tensor) -> Result<SymmetricEigen> {
    let (n, n2) = cov.as_matrix("symmetric_eigen")?;
    if n != n2 {
        return Err(LabError::shape("symmetric_eigen", cov.shape(), &[n, n]));
    }
    let src = cov.data();
    for i in 0..n {
        for j in (i + 1)..n {
            if (src[i * n + j] - src[j * n + i]).abs() > SYMMETRY_TOL {
                return Err(LabError::InvalidArgument(format!(
                    "symmetric_eigen: matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }

    let mut a = src.to_vec();
    // Symmetrize exactly so rotations see a single value per pair.
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = m;
            a[j * n + i] = m;
        }
    }
    let mut v = Tensor::eye(n).into_data();
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = 1e-15 * norm.max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        let off = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= threshold {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            vectors[r * n + new_col] = v[r * n + old_col];
        }
    }
    let vectors = Tensor::new([n, n], vectors)?;
    Ok(SymmetricEigen { values, vectors })
}

/// Column means of a `[samples × dims]` matrix.
pub fn column_means(x: &Tensor) -> Result<Vec<f64>> {
    let (n, d) = x.as_matrix("column_means")?;
    if n == 0 {
        return Err(LabError::InvalidArgument("column_means of zero rows".into()));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    Ok(mean)
}

/// Population covariance (divisor `n`) of the rows of `x`, plus the mean.
pub fn covariance(x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let (n, d) = x.as_matrix("covariance")?;
    let mean = column_means(x)?;
    let mut centered = x.data().to_vec();
    for r in 0..n {
        for c in 0..d {
            centered[r * d + c] -= mean[c];
        }
    }
    let centered = Tensor::new([n, d], centered)?;
    let mut cov = centered.t_matmul(&centered)?.into_data();
    cov.iter_mut().for_each(|v| *v /= n as f64);
    // Enforce exact symmetry lost to rounding in the product.
    for i in 0..d {
        for j in (i + 1)..d {
            let m = 0.5 * (cov[i * d + j] + cov[j * d + i]);
            cov[i * d + j] = m;
            cov[j * d + i] = m;
        }
    }
    Ok((Tensor::new([d, d], cov)?, mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn diagonal_case() {
        let m = Tensor::new([2, 2], vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let e = symmetric_eigen(&m).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0]);
        assert!(close(&e.vector(0), &[1.0, 0.0], 1e-15));
    }

    #[test]
    fn two_by_two_hand_case() {
        let m = Tensor::new([2, 2], vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let e = symmetric_eigen(&m).unwrap();
        assert!(close(&e.values, &[3.0, 1.0], 1e-12));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = e.vector(0);
        let sign = v0[0].signum();
        assert!(close(&[v0[0] * sign, v0[1] * sign], &[s, s], 1e-12));
        let v1 = e.vector(1);
        let sign = v1[0].signum();
        assert!(close(&[v1[0] * sign, v1[1] * sign], &[s, -s], 1e-12));
    }

    #[test]
    fn identity_is_degenerate_but_orthonormal() {
        let e = symmetric_eigen(&Tensor::eye(3)).unwrap();
        assert!(close(&e.values, &[1.0, 1.0, 1.0], 1e-15));
        let vtv = e.vectors.t_matmul(&e.vectors).unwrap();
        assert!(vtv.max_abs_diff(&Tensor::eye(3)).unwrap() < 1e-12);
    }

    #[test]
    fn asymmetric_input_rejected() {
        let m = Tensor::new([2, 2], vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(symmetric_eigen(&m).is_err());
    }

    #[test]
    fn covariance_of_line_is_rank_one() {
        let x = Tensor::new([3, 2], vec![0.0, 0.0, 1.0, 2.0, 2.0, 4.0]).unwrap();
        let (c, mean) = covariance(&x).unwrap();
        assert_eq!(mean, vec![1.0, 2.0]);
        let e = symmetric_eigen(&c).unwrap();
        assert!(e.values[1].abs() < 1e-12);
        assert!((e.values[0] - 10.0 / 3.0).abs() < 1e-12);
    }
}
