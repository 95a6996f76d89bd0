// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense `f64` tensors, reverse-mode autodiff and the small amount of linear
//! algebra the analysis code needs.

mod graph;
pub(crate) mod kernels;
pub mod linalg;
mod tensor;

pub use graph::{ComputeGraph, Var};
pub use linalg::{covariance, symmetric_eigen, SymmetricEigen};
pub use tensor::Tensor;
