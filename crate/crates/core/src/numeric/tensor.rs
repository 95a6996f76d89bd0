// SPDX-License-Identifier: MIT OR Apache-2.0

use super::kernels::{self, MatRef};
use crate::error::{LabError, Result};

/// Dense row-major `f64` array.
///
/// Values are checked for finiteness whenever a tensor is built from external
/// data or produced by an operation; a NaN never silently propagates.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, validating the element count and finiteness.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(LabError::shape("Tensor::new", &shape, &[data.len()]));
        }
        if !kernels::all_finite(&data) {
            return Err(LabError::NonFinite { op: "Tensor::new" });
        }
        Ok(Self::from_parts(shape, data))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::from_parts(shape, vec![0.0; n])
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::from_parts(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![], vec![value])
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Stacks equal-length rows into a matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(LabError::shape("Tensor::from_rows", &[cols], &[bad.len()]));
        }
        Self::new([rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Extent of the first axis of a matrix.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Extent of the last axis.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Row `i` of a matrix (last axis contiguous).
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    /// Gradient accumulated by the last backward pass, if any.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub(crate) fn set_grad(&mut self, grad: Option<Vec<f64>>) {
        debug_assert!(grad.as_ref().is_none_or(|g| g.len() == self.data.len()));
        self.grad = grad;
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(LabError::shape("reshape", &self.shape, &shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub(crate) fn check_finite(&self, op: &'static str) -> Result<()> {
        if kernels::all_finite(&self.data) {
            Ok(())
        } else {
            Err(LabError::NonFinite { op })
        }
    }

    pub(crate) fn as_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(LabError::shape(op, other, &[0, 0])),
        }
    }

    /// Matrix product `self[m×k] · other[k×n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.as_matrix("matmul")?;
        let (k2, n) = other.as_matrix("matmul")?;
        if k != k2 {
            return Err(LabError::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            1.0,
            MatRef::new(&self.data, m, k),
            MatRef::new(&other.data, k, n),
            0.0,
            &mut out,
        );
        let t = Tensor::from_parts(vec![m, n], out);
        t.check_finite("matmul")?;
        Ok(t)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (k, m) = self.as_matrix("t_matmul")?;
        let (k2, n) = other.as_matrix("t_matmul")?;
        if k != k2 {
            return Err(LabError::shape("t_matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            1.0,
            MatRef::t(&self.data, k, m),
            MatRef::new(&other.data, k, n),
            0.0,
            &mut out,
        );
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.as_matrix("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::from_parts(vec![c, r], out))
    }

    /// Softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.shape.len() {
            return Err(LabError::InvalidArgument(format!(
                "softmax axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        if self.shape[axis] == 0 {
            return Err(LabError::InvalidArgument("softmax over an empty axis".into()));
        }
        let (outer, extent, inner) = kernels::axis_split(&self.shape, axis);
        let mut out = vec![0.0; self.data.len()];
        kernels::softmax(&self.data, outer, extent, inner, &mut out);
        let t = Tensor::from_parts(self.shape.clone(), out);
        t.check_finite("softmax")?;
        Ok(t)
    }

    /// Layer norm over the last axis with affine `gain`/`bias`.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let width = self.cols();
        if width == 0 || self.shape.is_empty() {
            return Err(LabError::InvalidArgument("layer_norm needs a non-empty last axis".into()));
        }
        if gain.numel() != width || bias.numel() != width {
            return Err(LabError::shape("layer_norm", &self.shape, gain.shape()));
        }
        let mut xhat = vec![0.0; self.data.len()];
        let mut out = vec![0.0; self.data.len()];
        kernels::layer_norm(&self.data, width, &gain.data, &bias.data, eps, &mut xhat, &mut out);
        let t = Tensor::from_parts(self.shape.clone(), out);
        t.check_finite("layer_norm")?;
        Ok(t)
    }

    /// Elementwise GELU (tanh approximation).
    pub fn gelu(&self) -> Tensor {
        let data = self.data.iter().map(|&x| kernels::gelu(x).0).collect();
        Tensor::from_parts(self.shape.clone(), data)
    }

    /// Largest absolute elementwise difference; `None` if shapes differ.
    pub fn max_abs_diff(&self, other: &Tensor) -> Option<f64> {
        (self.shape == other.shape).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn construction_validates_length_and_finiteness() {
        assert!(Tensor::new([2, 2], vec![1.0; 3]).is_err());
        assert!(matches!(
            Tensor::new([1], vec![f64::NAN]),
            Err(LabError::NonFinite { .. })
        ));
        assert_eq!(Tensor::zeros([0, 3]).numel(), 0);
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(Tensor::eye(2).matmul(&a).unwrap(), a);
        let b = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
        let z = Tensor::zeros([3, 2]);
        assert!(z.matmul(&b).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = Tensor::zeros([2, 3]).matmul(&Tensor::zeros([2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, LabError::Shape { .. }));
    }

    #[test]
    fn softmax_examples() {
        let s = Tensor::new([3], vec![0.0; 3]).unwrap().softmax(0).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = Tensor::new([3], vec![1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        let s = x.softmax(0).unwrap();
        for (got, want) in s.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(Tensor::zeros([2, 0]).softmax(1).is_err());
        assert!(Tensor::zeros([2, 2]).softmax(2).is_err());
    }

    #[test]
    fn softmax_along_leading_axis() {
        let x = m(&[&[0.0, 1.0], &[0.0, 3.0]]);
        let s = x.softmax(0).unwrap();
        assert!((s.data()[0] - 0.5).abs() < 1e-15);
        assert!((s.data()[1] + s.data()[3] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_examples() {
        let ones = Tensor::full([4], 1.0);
        let zeros = Tensor::zeros([4]);
        let c = Tensor::full([1, 4], 7.5).layer_norm(&ones, &zeros, 1e-5).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));

        let g = Tensor::full([2], 1.0);
        let b = Tensor::zeros([2]);
        let y = m(&[&[1.0, -1.0]]).layer_norm(&g, &b, 1e-12).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-9 && (y.data()[1] + 1.0).abs() < 1e-9);
        let y = m(&[&[2.0, 4.0]]).layer_norm(&g, &b, 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
    }
}
