// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`ComputeGraph`] is an append-only list of nodes. Each op validates its
//! inputs, computes its output eagerly, checks the output for NaN/Inf and
//! pushes a node that remembers whatever the backward rule needs. Because a
//! node can only reference nodes pushed before it, insertion order is a
//! topological order and [`ComputeGraph::backward`] simply walks it in
//! reverse.

use super::kernels::{self, MatRef};
use super::Tensor;
use crate::error::{LabError, Result};

/// Handle to a node of a [`ComputeGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Gelu {
        x: Var,
        tanh: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    CausalAttention {
        q: Var,
        k: Var,
        v: Var,
        seq_len: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    OverwriteRows {
        x: Var,
        rows: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(..) => "sum",
            Op::Gelu { .. } => "gelu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Softmax { .. } => "softmax",
            Op::CausalAttention { .. } => "causal_attention",
            Op::Embedding { .. } => "embedding",
            Op::SelectRows { .. } => "select_rows",
            Op::OverwriteRows { .. } => "overwrite_rows",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Mse { .. } => "mse",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _) | Op::Sum(x) => vec![*x],
            Op::Gelu { x, .. }
            | Op::Softmax { x, .. }
            | Op::SelectRows { x, .. }
            | Op::OverwriteRows { x, .. } => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::CausalAttention { q, k, v, .. } => vec![*q, *k, *v],
            Op::Embedding { table, .. } => vec![*table],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Mse { pred, .. } => vec![*pred],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only autodiff tape. Confined to one thread while in use.
#[derive(Debug, Default)]
pub struct ComputeGraph {
    nodes: Vec<Node>,
}

impl ComputeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a leaf. Gradients are tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Operation tag and input handles of a node, in insertion order.
    pub fn node_info(&self, v: Var) -> (&'static str, Vec<Var>) {
        let op = &self.nodes[v.0].op;
        (op.tag(), op.inputs())
    }

    /// Gradient stored on a leaf by the last [`backward`](Self::backward).
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        value.check_finite(op.tag())?;
        let needs_grad = op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.nodes[v.0].value.as_matrix(op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(LabError::shape("add", self.shape(a), self.shape(b)));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let value = Tensor::from_parts(self.shape(a).to_vec(), data);
        self.push(value, Op::Add(a, b))
    }

    /// `x[m×n] + bias[n]`, the bias broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.matrix(x, "add_row")?;
        if self.value(bias).numel() != n {
            return Err(LabError::shape("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.data(bias);
        let mut data = self.data(x).to_vec();
        for row in data.chunks_exact_mut(n) {
            axpy(row, b, 1.0);
        }
        let value = Tensor::from_parts(self.shape(x).to_vec(), data);
        self.push(value, Op::AddRow(x, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(LabError::shape("mul", self.shape(a), self.shape(b)));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let value = Tensor::from_parts(self.shape(a).to_vec(), data);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let data = self.data(x).iter().map(|v| v * factor).collect();
        let value = Tensor::from_parts(self.shape(x).to_vec(), data);
        self.push(value, Op::Scale(x, factor))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.data(x).iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xd = self.data(x);
        let mut data = vec![0.0; xd.len()];
        let mut tanh = vec![0.0; xd.len()];
        for ((&v, y), t) in xd.iter().zip(&mut data).zip(&mut tanh) {
            (*y, *t) = kernels::gelu(v);
        }
        let value = Tensor::from_parts(self.shape(x).to_vec(), data);
        self.push(value, Op::Gelu { x, tanh })
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let width = xv.cols();
        if width == 0 || xv.ndim() == 0 {
            return Err(LabError::InvalidArgument("layer_norm needs a non-empty last axis".into()));
        }
        if self.value(gain).numel() != width || self.value(bias).numel() != width {
            return Err(LabError::shape("layer_norm", xv.shape(), self.shape(gain)));
        }
        let mut xhat = vec![0.0; xv.numel()];
        let mut out = vec![0.0; xv.numel()];
        let rstd = kernels::layer_norm(
            xv.data(),
            width,
            self.data(gain),
            self.data(bias),
            eps,
            &mut xhat,
            &mut out,
        );
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = self.value(x).softmax(axis)?;
        self.push(value, Op::Softmax { x, axis })
    }

    /// Multi-head causal self-attention core: `softmax(q kᵀ/√d_h + mask) v`.
    ///
    /// `q`, `k`, `v` are `[batch·seq_len × d]`, rows grouped by sequence.
    /// Position `i` attends to positions `0..=i` of its own sequence only; the
    /// masked scores are never computed, so outputs at position `i` are
    /// independent of anything at later positions.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        seq_len: usize,
        heads: usize,
    ) -> Result<Var> {
        let (rows, d) = self.matrix(q, "causal_attention")?;
        if self.shape(k) != [rows, d] || self.shape(v) != [rows, d] {
            return Err(LabError::shape("causal_attention", self.shape(q), self.shape(k)));
        }
        if seq_len == 0 || rows % seq_len != 0 || heads == 0 || d % heads != 0 {
            return Err(LabError::InvalidArgument(format!(
                "causal_attention: rows {rows}, seq_len {seq_len}, d {d}, heads {heads}"
            )));
        }
        let batch = rows / seq_len;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut probs = vec![0.0; batch * heads * seq_len * seq_len];
        let mut out = vec![0.0; rows * d];
        let mut scores = vec![0.0; seq_len];
        for b in 0..batch {
            for h in 0..heads {
                let col = h * dh;
                for i in 0..seq_len {
                    let qi = &qd[(b * seq_len + i) * d + col..][..dh];
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in scores.iter_mut().enumerate().take(i + 1) {
                        let kj = &kd[(b * seq_len + j) * d + col..][..dh];
                        *s = scale * dot(qi, kj);
                        max = max.max(*s);
                    }
                    let mut total = 0.0;
                    for s in &mut scores[..=i] {
                        *s = (*s - max).exp();
                        total += *s;
                    }
                    let p_row = &mut probs[((b * heads + h) * seq_len + i) * seq_len..][..seq_len];
                    let o = &mut out[(b * seq_len + i) * d + col..][..dh];
                    for j in 0..=i {
                        let p = scores[j] / total;
                        p_row[j] = p;
                        let vj = &vd[(b * seq_len + j) * d + col..][..dh];
                        for (oc, vc) in o.iter_mut().zip(vj) {
                            *oc += p * vc;
                        }
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![rows, d], out);
        self.push(
            value,
            Op::CausalAttention {
                q,
                k,
                v,
                seq_len,
                heads,
                probs,
            },
        )
    }

    /// Gathers rows of a `[n × d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (n, d) = self.matrix(table, "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(LabError::InvalidArgument(format!(
                "embedding id {bad} out of range for table of {n} rows"
            )));
        }
        let t = self.data(table);
        let data = ids.iter().flat_map(|&i| t[i * d..(i + 1) * d].iter().copied()).collect();
        let value = Tensor::from_parts(vec![ids.len(), d], data);
        self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// New matrix made of the listed rows of `x`, in order.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, d) = self.matrix(x, "select_rows")?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(LabError::InvalidArgument(format!("select_rows: row {bad} >= {n}")));
        }
        let xd = self.data(x);
        let data = rows.iter().flat_map(|&r| xd[r * d..(r + 1) * d].iter().copied()).collect();
        let value = Tensor::from_parts(vec![rows.len(), d], data);
        self.push(
            value,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    /// Copy of `x` with the listed rows replaced by rows of `values`
    /// (`[rows.len() × d]`). Replaced entries are constants: no gradient
    /// flows back through them into `x`.
    pub fn overwrite_rows(&mut self, x: Var, rows: &[usize], values: &Tensor) -> Result<Var> {
        let (n, d) = self.matrix(x, "overwrite_rows")?;
        if values.shape() != [rows.len(), d] {
            return Err(LabError::shape("overwrite_rows", &[rows.len(), d], values.shape()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(LabError::InvalidArgument(format!("overwrite_rows: row {bad} >= {n}")));
        }
        let mut data = self.data(x).to_vec();
        for (i, &r) in rows.iter().enumerate() {
            data[r * d..(r + 1) * d].copy_from_slice(values.row(i));
        }
        let value = Tensor::from_parts(vec![n, d], data);
        self.push(
            value,
            Op::OverwriteRows {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    /// Mean negative log-likelihood of `targets` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (b, v) = self.matrix(logits, "cross_entropy")?;
        if targets.len() != b {
            return Err(LabError::shape("cross_entropy", &[b, v], &[targets.len()]));
        }
        if b == 0 {
            return Err(LabError::InvalidArgument("cross_entropy over an empty batch".into()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(LabError::InvalidArgument(format!(
                "cross_entropy target {bad} out of range for {v} classes"
            )));
        }
        let mut probs = vec![0.0; b * v];
        kernels::softmax(self.data(logits), b, v, 1, &mut probs);
        let ld = self.data(logits);
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = &ld[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        let value = Tensor::scalar(loss / b as f64);
        self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(LabError::shape("mse", self.shape(pred), target.shape()));
        }
        let n = target.numel();
        if n == 0 {
            return Err(LabError::InvalidArgument("mse over an empty tensor".into()));
        }
        let total: f64 = self
            .data(pred)
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let value = Tensor::scalar(total / n as f64);
        self.push(
            value,
            Op::Mse {
                pred,
                target: target.data().to_vec(),
            },
        )
    }

    /// Populates `∂loss/∂leaf` on every leaf that requires a gradient.
    ///
    /// Nodes are visited in exact reverse insertion order. Gradients from a
    /// previous call are replaced, not accumulated.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(LabError::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.value.set_grad(None);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                leaf_grads.push((id, g));
            }
        }
        for (id, g) in leaf_grads {
            if !kernels::all_finite(&g) {
                return Err(LabError::NonFinite { op: "backward" });
            }
            self.nodes[id].value.set_grad(Some(g));
        }
        Ok(())
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
                let n = nodes[b.0].value.cols();
                if let Some(da) = slot(grads, nodes, *a) {
                    let bd = nodes[b.0].value.data();
                    kernels::gemm(1.0, MatRef::new(g, m, n), MatRef::t(bd, k, n), 1.0, da);
                }
                if let Some(db) = slot(grads, nodes, *b) {
                    let ad = nodes[a.0].value.data();
                    kernels::gemm(1.0, MatRef::t(ad, m, k), MatRef::new(g, m, n), 1.0, db);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(d) = slot(grads, nodes, *v) {
                        axpy(d, g, 1.0);
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if let Some(dx) = slot(grads, nodes, *x) {
                    axpy(dx, g, 1.0);
                }
                if let Some(db) = slot(grads, nodes, *bias) {
                    let n = db.len();
                    for row in g.chunks_exact(n) {
                        axpy(db, row, 1.0);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(da) = slot(grads, nodes, *a) {
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(nodes[b.0].value.data()) {
                        *d += gi * bi;
                    }
                }
                if let Some(db) = slot(grads, nodes, *b) {
                    for ((d, gi), ai) in db.iter_mut().zip(g).zip(nodes[a.0].value.data()) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Scale(x, f) => {
                if let Some(dx) = slot(grads, nodes, *x) {
                    axpy(dx, g, *f);
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = slot(grads, nodes, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Gelu { x, tanh } => {
                if let Some(dx) = slot(grads, nodes, *x) {
                    let xd = nodes[x.0].value.data();
                    for i in 0..dx.len() {
                        dx[i] += g[i] * kernels::gelu_grad(xd[i], tanh[i]);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let width = nodes[gain.0].value.numel();
                if let Some(dg) = slot(grads, nodes, *gain) {
                    for (grow, xrow) in g.chunks_exact(width).zip(xhat.chunks_exact(width)) {
                        for c in 0..width {
                            dg[c] += grow[c] * xrow[c];
                        }
                    }
                }
                if let Some(db) = slot(grads, nodes, *bias) {
                    for grow in g.chunks_exact(width) {
                        axpy(db, grow, 1.0);
                    }
                }
                if let Some(dx) = slot(grads, nodes, *x) {
                    let gain = nodes[gain.0].value.data();
                    let mut dxhat = vec![0.0; width];
                    for (r, inv) in rstd.iter().enumerate() {
                        let grow = &g[r * width..(r + 1) * width];
                        let xrow = &xhat[r * width..(r + 1) * width];
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..width {
                            dxhat[c] = grow[c] * gain[c];
                            mean_d += dxhat[c];
                            mean_dx += dxhat[c] * xrow[c];
                        }
                        mean_d /= width as f64;
                        mean_dx /= width as f64;
                        let out = &mut dx[r * width..(r + 1) * width];
                        for c in 0..width {
                            out[c] += inv * (dxhat[c] - mean_d - xrow[c] * mean_dx);
                        }
                    }
                }
            }
            Op::Softmax { x, axis } => {
                if let Some(dx) = slot(grads, nodes, *x) {
                    let (outer, extent, inner) =
                        kernels::axis_split(node.value.shape(), *axis);
                    kernels::softmax_backward(node.value.data(), g, outer, extent, inner, dx);
                }
            }
            Op::CausalAttention {
                q,
                k,
                v,
                seq_len,
                heads,
                probs,
            } => {
                let (dq, dk, dv) = attention_backward(
                    nodes[q.0].value.data(),
                    nodes[k.0].value.data(),
                    nodes[v.0].value.data(),
                    nodes[q.0].value.cols(),
                    *seq_len,
                    *heads,
                    probs,
                    g,
                );
                for (var, local) in [(q, dq), (k, dk), (v, dv)] {
                    if let Some(d) = slot(grads, nodes, *var) {
                        axpy(d, &local, 1.0);
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(dt) = slot(grads, nodes, *table) {
                    let d = g.len() / ids.len().max(1);
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(&mut dt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d], 1.0);
                    }
                }
            }
            Op::SelectRows { x, rows } => {
                if let Some(dx) = slot(grads, nodes, *x) {
                    let d = node.value.cols();
                    for (i, &r) in rows.iter().enumerate() {
                        axpy(&mut dx[r * d..(r + 1) * d], &g[i * d..(i + 1) * d], 1.0);
                    }
                }
            }
            Op::OverwriteRows { x, rows } => {
                if let Some(dx) = slot(grads, nodes, *x) {
                    let d = node.value.cols();
                    let mut masked = g.to_vec();
                    for &r in rows {
                        masked[r * d..(r + 1) * d].fill(0.0);
                    }
                    axpy(dx, &masked, 1.0);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if let Some(dl) = slot(grads, nodes, *logits) {
                    let b = targets.len();
                    let v = probs.len() / b;
                    let coef = g[0] / b as f64;
                    for (r, &t) in targets.iter().enumerate() {
                        for c in 0..v {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            dl[r * v + c] += coef * (probs[r * v + c] - onehot);
                        }
                    }
                }
            }
            Op::Mse { pred, target } => {
                if let Some(dp) = slot(grads, nodes, *pred) {
                    let coef = 2.0 * g[0] / target.len() as f64;
                    let pd = nodes[pred.0].value.data();
                    for i in 0..dp.len() {
                        dp[i] += coef * (pd[i] - target[i]);
                    }
                }
            }
        }
    }
}

/// Gradient accumulator of `v`, allocated on first use; `None` when `v`
/// does not participate in differentiation.
fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut [f64]> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let len = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
}

#[inline]
fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    d: usize,
    seq_len: usize,
    heads: usize,
    probs: &[f64],
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = q.len() / d;
    let batch = rows / seq_len;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; q.len()];
    let mut dk = vec![0.0; k.len()];
    let mut dv = vec![0.0; v.len()];
    let mut dp = vec![0.0; seq_len];
    for b in 0..batch {
        for h in 0..heads {
            let col = h * dh;
            for i in 0..seq_len {
                let row_i = (b * seq_len + i) * d + col;
                let gi = &g[row_i..row_i + dh];
                let p_row = &probs[((b * heads + h) * seq_len + i) * seq_len..][..seq_len];
                let mut weighted = 0.0;
                for j in 0..=i {
                    let row_j = (b * seq_len + j) * d + col;
                    dp[j] = dot(gi, &v[row_j..row_j + dh]);
                    weighted += p_row[j] * dp[j];
                    axpy(&mut dv[row_j..row_j + dh], gi, p_row[j]);
                }
                for j in 0..=i {
                    let ds = scale * p_row[j] * (dp[j] - weighted);
                    let row_j = (b * seq_len + j) * d + col;
                    axpy(&mut dq[row_i..row_i + dh], &k[row_j..row_j + dh], ds);
                    axpy(&mut dk[row_j..row_j + dh], &q[row_i..row_i + dh], ds);
                }
            }
        }
    }
    (dq, dk, dv)
}
