// SPDX-License-Identifier: MIT OR Apache-2.0

//! Raw slice kernels shared by [`Tensor`](super::Tensor) methods and the
//! autodiff graph. Callers validate shapes; kernels only assert.

/// Row-major matrix view descriptor: `rows × cols` with an optional transpose
/// of the underlying storage.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    /// Logical rows after the transpose is applied.
    pub rows: usize,
    /// Logical columns after the transpose is applied.
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    /// View of a stored `rows × cols` matrix as its transpose (`cols × rows`).
    pub fn t(data: &'a [f64], stored_rows: usize, stored_cols: usize) -> Self {
        Self {
            data,
            rows: stored_cols,
            cols: stored_rows,
            transposed: true,
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.rows as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = alpha · a · b + beta · c` with `c` row-major `a.rows × b.cols`.
#[allow(unsafe_code)]
pub(crate) fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "gemm inner dimension");
    assert_eq!(a.data.len(), m * k, "gemm lhs storage");
    assert_eq!(b.data.len(), k * n, "gemm rhs storage");
    assert_eq!(c.len(), m * n, "gemm output storage");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the asserts above guarantee every index reachable through the
    // strides lies inside the three slices, and `c` does not alias `a` or `b`
    // because it is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Splits a shape around `axis` into `(outer, extent, inner)`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Numerically stable softmax along an axis described by `axis_split`.
pub(crate) fn softmax(x: &[f64], outer: usize, extent: usize, inner: usize, out: &mut [f64]) {
    for o in 0..outer {
        for i in 0..inner {
            let base = o * extent * inner + i;
            let mut max = f64::NEG_INFINITY;
            for j in 0..extent {
                max = max.max(x[base + j * inner]);
            }
            let mut total = 0.0;
            for j in 0..extent {
                let e = (x[base + j * inner] - max).exp();
                out[base + j * inner] = e;
                total += e;
            }
            for j in 0..extent {
                out[base + j * inner] /= total;
            }
        }
    }
}

/// Backward of softmax: `dx = y ⊙ (dy − Σ y·dy)` along the axis.
pub(crate) fn softmax_backward(
    y: &[f64],
    dy: &[f64],
    outer: usize,
    extent: usize,
    inner: usize,
    dx: &mut [f64],
) {
    for o in 0..outer {
        for i in 0..inner {
            let base = o * extent * inner + i;
            let mut dot = 0.0;
            for j in 0..extent {
                dot += y[base + j * inner] * dy[base + j * inner];
            }
            for j in 0..extent {
                let idx = base + j * inner;
                dx[idx] += y[idx] * (dy[idx] - dot);
            }
        }
    }
}

/// Row-wise layer norm. Returns the per-row reciprocal standard deviations
/// and writes the normalized (pre-affine) rows into `xhat`.
pub(crate) fn layer_norm(
    x: &[f64],
    width: usize,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
    xhat: &mut [f64],
    out: &mut [f64],
) -> Vec<f64> {
    let rows = x.len() / width;
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * width..(r + 1) * width];
        let mean = row.iter().sum::<f64>() / width as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
        let inv = 1.0 / (var + eps).sqrt();
        rstd.push(inv);
        let xh = &mut xhat[r * width..(r + 1) * width];
        let o = &mut out[r * width..(r + 1) * width];
        for c in 0..width {
            let n = (row[c] - mean) * inv;
            xh[c] = n;
            o[c] = n * gain[c] + bias[c];
        }
    }
    rstd
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation. Also returns the tanh term for reuse in backward.
#[inline]
pub(crate) fn gelu(x: f64) -> (f64, f64) {
    let t = 1.0 - 2.0 / ((2.0 * GELU_C * (x + GELU_A * x * x * x)).exp() + 1.0);
    (0.5 * x * (1.0 + t), t)
}

#[inline]
pub(crate) fn gelu_grad(x: f64, t: f64) -> f64 {
    let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * dt
}

pub(crate) fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn transposed_views_match_explicit_transpose() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect(); // 4x3
        // a · bᵀ : 2x4
        let mut bt = vec![0.0; 12];
        for r in 0..4 {
            for c in 0..3 {
                bt[c * 4 + r] = b[r * 3 + c];
            }
        }
        let expect = naive(&a, &bt, 2, 3, 4);
        let mut got = vec![0.0; 8];
        gemm(1.0, MatRef::new(&a, 2, 3), MatRef::t(&b, 4, 3), 0.0, &mut got);
        for (x, y) in got.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_matches_known_values() {
        assert_eq!(gelu(0.0).0, 0.0);
        assert!((gelu(1.0).0 - 0.841_191_990_607_477).abs() < 1e-12);
        let h = 1e-6;
        for &x in &[-2.0, -0.3, 0.0, 0.7, 3.1] {
            let fd = (gelu(x + h).0 - gelu(x - h).0) / (2.0 * h);
            let (_, t) = gelu(x);
            assert!((gelu_grad(x, t) - fd).abs() < 1e-8);
        }
    }
}
