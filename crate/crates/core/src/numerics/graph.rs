//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every op in creation order. Nodes are referenced by
//! [`Var`] handles; `backward` walks the tape once in reverse and accumulates
//! vector-Jacobian products into the inputs that require gradients.
//!
//! Model parameters are borrowed rather than copied: a graph built with
//! [`Graph::with_params`] exposes them through [`Graph::param`].

use crate::error::{Error, Result};

use super::kernels::{self, gemm};
use super::Tensor;

/// Clamp applied inside the log of the cross-entropy losses.
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value {
    Owned(Tensor),
    Param(usize),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Gelu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Transpose(Var),
    SliceCols {
        x: Var,
        start: usize,
        end: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
        end: usize,
    },
    ConcatRows(Vec<Var>),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    MeanRows {
        x: Var,
        start: usize,
        end: usize,
    },
    Sum(Var),
    L2Normalize(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    CrossEntropy {
        probs: Var,
        targets: Vec<usize>,
    },
    Bce {
        scores: Var,
        labels: Vec<bool>,
    },
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Single-threaded compute graph. Independent graphs may live on separate
/// threads and share the same borrowed parameters.
pub struct Graph<'p> {
    params: &'p [Tensor],
    param_nodes: Vec<Option<Var>>,
    params_require_grad: bool,
    nodes: Vec<Node>,
    backward_done: bool,
    visited: usize,
}

impl Default for Graph<'static> {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph<'static> {
    pub fn new() -> Self {
        Graph::with_params(&[], false)
    }
}

impl<'p> Graph<'p> {
    pub fn with_params(params: &'p [Tensor], requires_grad: bool) -> Self {
        Self {
            params,
            param_nodes: vec![None; params.len()],
            params_require_grad: requires_grad,
            nodes: Vec::new(),
            backward_done: false,
            visited: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(i) => &self.params[*i],
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient of parameter `i`, if it took part in the last backward pass.
    pub fn param_grad(&self, i: usize) -> Option<&[f64]> {
        self.param_nodes[i].and_then(|v| self.grad(v))
    }

    /// Moves all parameter gradients out of the graph, indexed like the
    /// parameter slice.
    pub fn take_param_grads(&mut self) -> Vec<Option<Vec<f64>>> {
        let nodes = &mut self.nodes;
        self.param_nodes
            .iter()
            .map(|v| v.and_then(|v| nodes[v.0].grad.take()))
            .collect()
    }

    /// Number of nodes whose backward rule ran during the last pass.
    pub fn visited_nodes(&self) -> usize {
        self.visited
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Result<Var> {
        self.check_finite(&t, "leaf")?;
        Ok(self.push_node(Value::Owned(t), Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t, false)
    }

    /// Node for the `i`-th borrowed parameter; created on first use.
    pub fn param(&mut self, i: usize) -> Var {
        if let Some(v) = self.param_nodes[i] {
            return v;
        }
        let v = self.push_node(Value::Param(i), Op::Leaf, self.params_require_grad);
        self.param_nodes[i] = Some(v);
        v
    }

    fn push_node(&mut self, value: Value, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_finite(&self, t: &Tensor, what: &'static str) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::NonFinite(what));
        }
        Ok(())
    }

    fn push(&mut self, t: Tensor, op: Op, inputs: &[Var], what: &'static str) -> Result<Var> {
        self.check_finite(&t, what)?;
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_node(Value::Owned(t), op, rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b), &[a, b], "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push(out, Op::Add(a, b), &[a, b], "add")
    }

    /// Adds a vector to every slice along the last axis; the only
    /// broadcasting form supported.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let d = xv.last_dim();
        if bv.numel() != d {
            return Err(Error::shape(format!(
                "bias of {} values for last axis {d}",
                bv.numel()
            )));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(d) {
            row.iter_mut().zip(bv.data()).for_each(|(v, b)| *v += b);
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(out, Op::AddBias(x, bias), &[x, bias], "add_bias")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push(out, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = kernels::map(self.value(x), |v| v * c);
        self.push(out, Op::Scale(x, c), &[x], "scale")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = kernels::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid(x), &[x], "sigmoid")
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = kernels::gelu(self.value(x));
        self.push(out, Op::Gelu(x), &[x], "gelu")
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = kernels::softmax(self.value(x), axis)?;
        self.push(out, Op::Softmax { x, axis }, &[x], "softmax")
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let parts =
            kernels::layer_norm_forward(self.value(x), self.value(gain), self.value(bias), eps)?;
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            normalized: parts.normalized,
            inv_std: parts.inv_std,
        };
        self.push(parts.out, op, &[x, gain, bias], "layer_norm")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        let out = Tensor::matrix(c, r, transpose_buf(xv.data(), r, c))?;
        self.push(out, Op::Transpose(x), &[x], "transpose")
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        if start >= end || end > c {
            return Err(Error::shape(format!("column range {start}..{end} of {c}")));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&xv.row(i)[start..end]);
        }
        let out = Tensor::matrix(r, w, data)?;
        self.push(out, Op::SliceCols { x, start, end }, &[x], "slice_cols")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let (rows, _) = self.value(*parts.first().ok_or_else(|| Error::shape("empty concat"))?)
            .dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(Error::shape("concat_cols row counts differ"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), parts, "concat_cols")
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        if start >= end || end > r {
            return Err(Error::shape(format!("row range {start}..{end} of {r}")));
        }
        let out = Tensor::matrix(end - start, c, xv.data()[start * c..end * c].to_vec())?;
        self.push(out, Op::SliceRows { x, start, end }, &[x], "slice_rows")
    }

    /// Stacks matrices (or vectors, as single rows) vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("empty concat"))?;
        let cols = self.value(first).last_dim();
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.last_dim() != cols || v.shape().len() > 2 {
                return Err(Error::shape("concat_rows widths differ"));
            }
            data.extend_from_slice(v.data());
        }
        let rows = data.len() / cols;
        let out = Tensor::matrix(rows, cols, data)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), parts, "concat_rows")
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (n, d) = tv.dims2()?;
        if ids.is_empty() {
            return Err(Error::shape("gather of zero rows"));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= n {
                return Err(Error::invalid(format!("row id {id} out of range {n}")));
            }
            data.extend_from_slice(tv.row(id));
        }
        let out = Tensor::matrix(ids.len(), d, data)?;
        let op = Op::GatherRows {
            table,
            ids: ids.to_vec(),
        };
        self.push(out, op, &[table], "gather_rows")
    }

    /// Elementwise mean of rows `start..end`, as a `1×d` matrix.
    pub fn mean_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, d) = xv.dims2()?;
        if start >= end || end > r {
            return Err(Error::shape(format!("row span {start}..{end} of {r}")));
        }
        let t = (end - start) as f64;
        let mut acc = vec![0.0; d];
        for i in start..end {
            acc.iter_mut().zip(xv.row(i)).for_each(|(a, v)| *a += v);
        }
        acc.iter_mut().for_each(|a| *a /= t);
        let out = Tensor::matrix(1, d, acc)?;
        self.push(out, Op::MeanRows { x, start, end }, &[x], "mean_rows")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(out, Op::Sum(x), &[x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let out = kernels::l2_normalize(self.value(x))?;
        self.push(out, Op::L2Normalize(x), &[x], "l2_normalize")
    }

    /// Multiplies by a fixed mask (already scaled by the keep probability).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.numel() {
            return Err(Error::shape("dropout mask length"));
        }
        let data = zip_map(xv.data(), &mask, |a, m| a * m);
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(out, Op::Dropout { x, mask }, &[x], "dropout")
    }

    /// Mean over rows of `-ln(max(p[r, target_r], LOG_EPS))`.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize]) -> Result<Var> {
        let pv = self.value(probs);
        let classes = pv.last_dim();
        let rows = pv.outer_len();
        if targets.len() != rows {
            return Err(Error::shape(format!(
                "{} targets for {rows} rows",
                targets.len()
            )));
        }
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= classes {
                return Err(Error::invalid(format!("target {t} of {classes} classes")));
            }
            total -= pv.row(r)[t].max(LOG_EPS).ln();
        }
        let out = Tensor::scalar(total / rows as f64);
        let op = Op::CrossEntropy {
            probs,
            targets: targets.to_vec(),
        };
        self.push(out, op, &[probs], "cross_entropy")
    }

    /// Mean binary cross-entropy of scores in (0,1) against boolean labels.
    pub fn bce(&mut self, scores: Var, labels: &[bool]) -> Result<Var> {
        let sv = self.value(scores);
        if labels.is_empty() || labels.len() != sv.numel() {
            return Err(Error::shape(format!(
                "{} labels for {} scores",
                labels.len(),
                sv.numel()
            )));
        }
        let out = Tensor::scalar(bce_value(sv.data(), labels));
        let op = Op::Bce {
            scores,
            labels: labels.to_vec(),
        };
        self.push(out, op, &[scores], "bce")
    }

    /// Clears gradients so that `backward` may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
        self.visited = 0;
    }

    /// Populates gradients of `loss` for every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Backward(
                "backward already ran on this graph; reset grads first".into(),
            ));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Backward("loss is detached from any parameter".into()));
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        self.visited = 0;
        for idx in (0..=loss.0).rev() {
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            self.visited += 1;
            let contributions = self.vjp(idx, &g);
            self.nodes[idx].grad = Some(g);
            for (v, contrib) in contributions {
                let node = &mut self.nodes[v.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    None => node.grad = Some(contrib),
                }
            }
        }
        self.backward_done = true;
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn vjp(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let out = match &node.value {
            Value::Owned(t) => t,
            Value::Param(i) => &self.params[*i],
        };
        let mut acc = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2().expect("matmul input");
                let n = bv.last_dim();
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, 1.0, g, false, bv.data(), true, 0.0, &mut da);
                    acc.push((*a, da));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, 1.0, av.data(), true, g, false, 0.0, &mut db);
                    acc.push((*b, db));
                }
            }
            Op::Add(a, b) => {
                acc.push((*a, g.to_vec()));
                acc.push((*b, g.to_vec()));
            }
            Op::AddBias(x, bias) => {
                if self.needs(*bias) {
                    let d = self.value(*bias).numel();
                    let mut db = vec![0.0; d];
                    for row in g.chunks(d) {
                        db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    acc.push((*bias, db));
                }
                acc.push((*x, g.to_vec()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    acc.push((*a, zip_map(g, bv, |g, b| g * b)));
                }
                if self.needs(*b) {
                    acc.push((*b, zip_map(g, av, |g, a| g * a)));
                }
            }
            Op::Scale(x, c) => acc.push((*x, g.iter().map(|v| v * c).collect())),
            Op::Sigmoid(x) => {
                acc.push((*x, zip_map(g, out.data(), |g, y| g * y * (1.0 - y))));
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                acc.push((*x, zip_map(g, xv, |g, v| g * kernels::gelu_grad_scalar(v))));
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) =
                    kernels::axis_extents(out.shape(), *axis).expect("softmax axis");
                let y = out.data();
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..len)
                            .map(|j| g[base + j * inner] * y[base + j * inner])
                            .sum();
                        for j in 0..len {
                            let p = base + j * inner;
                            dx[p] = y[p] * (g[p] - dot);
                        }
                    }
                }
                acc.push((*x, dx));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let gv = self.value(*gain).data();
                let d = gv.len();
                if self.needs(*gain) {
                    let mut dg = vec![0.0; d];
                    for (grow, nrow) in g.chunks(d).zip(normalized.chunks(d)) {
                        for j in 0..d {
                            dg[j] += grow[j] * nrow[j];
                        }
                    }
                    acc.push((*gain, dg));
                }
                if self.needs(*bias) {
                    let mut db = vec![0.0; d];
                    for grow in g.chunks(d) {
                        db.iter_mut().zip(grow).for_each(|(a, v)| *a += v);
                    }
                    acc.push((*bias, db));
                }
                if self.needs(*x) {
                    let mut dx = vec![0.0; g.len()];
                    let dn = d as f64;
                    for (r, ((grow, nrow), dxrow)) in g
                        .chunks(d)
                        .zip(normalized.chunks(d))
                        .zip(dx.chunks_mut(d))
                        .enumerate()
                    {
                        let mut sum_dxh = 0.0;
                        let mut sum_dxh_xh = 0.0;
                        for j in 0..d {
                            let dxh = grow[j] * gv[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * nrow[j];
                        }
                        let inv = inv_std[r];
                        for j in 0..d {
                            let dxh = grow[j] * gv[j];
                            dxrow[j] = inv / dn * (dn * dxh - sum_dxh - nrow[j] * sum_dxh_xh);
                        }
                    }
                    acc.push((*x, dx));
                }
            }
            Op::Transpose(x) => {
                let (r, c) = out.dims2().expect("transpose output");
                acc.push((*x, transpose_buf(g, r, c)));
            }
            Op::SliceCols { x, start, end } => {
                let (r, c) = self.value(*x).dims2().expect("slice input");
                let w = end - start;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                acc.push((*x, dx));
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = out.dims2().expect("concat output");
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    if self.needs(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            dp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        acc.push((p, dp));
                    }
                    offset += w;
                }
            }
            Op::SliceRows { x, start, end } => {
                let xv = self.value(*x);
                let c = xv.last_dim();
                let mut dx = vec![0.0; xv.numel()];
                dx[start * c..end * c].copy_from_slice(g);
                acc.push((*x, dx));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if self.needs(p) {
                        acc.push((p, g[offset..offset + n].to_vec()));
                    }
                    offset += n;
                }
            }
            Op::GatherRows { table, ids } => {
                let tv = self.value(*table);
                let d = tv.last_dim();
                let mut dt = vec![0.0; tv.numel()];
                for (i, &id) in ids.iter().enumerate() {
                    dt[id * d..(id + 1) * d]
                        .iter_mut()
                        .zip(&g[i * d..(i + 1) * d])
                        .for_each(|(a, v)| *a += v);
                }
                acc.push((*table, dt));
            }
            Op::MeanRows { x, start, end } => {
                let xv = self.value(*x);
                let d = xv.last_dim();
                let t = (end - start) as f64;
                let mut dx = vec![0.0; xv.numel()];
                for i in *start..*end {
                    dx[i * d..(i + 1) * d]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(a, v)| *a = v / t);
                }
                acc.push((*x, dx));
            }
            Op::Sum(x) => acc.push((*x, vec![g[0]; self.value(*x).numel()])),
            Op::L2Normalize(x) => {
                let xv = self.value(*x);
                let d = xv.last_dim();
                let mut dx = vec![0.0; xv.numel()];
                for r in 0..xv.outer_len() {
                    let xr = xv.row(r);
                    let yr = out.row(r);
                    let gr = &g[r * d..(r + 1) * d];
                    let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..d {
                        dx[r * d + j] = (gr[j] - yr[j] * dot) / norm;
                    }
                }
                acc.push((*x, dx));
            }
            Op::Dropout { x, mask } => acc.push((*x, zip_map(g, mask, |g, m| g * m))),
            Op::CrossEntropy { probs, targets } => {
                let pv = self.value(*probs);
                let c = pv.last_dim();
                let rows = targets.len() as f64;
                let mut dp = vec![0.0; pv.numel()];
                for (r, &t) in targets.iter().enumerate() {
                    let p = pv.row(r)[t];
                    if p > LOG_EPS {
                        dp[r * c + t] = -g[0] / (rows * p);
                    }
                }
                acc.push((*probs, dp));
            }
            Op::Bce { scores, labels } => {
                let sv = self.value(*scores).data();
                let k = labels.len() as f64;
                let ds = sv
                    .iter()
                    .zip(labels)
                    .map(|(&s, &y)| {
                        if y {
                            if s > LOG_EPS {
                                -g[0] / (k * s)
                            } else {
                                0.0
                            }
                        } else if 1.0 - s > LOG_EPS {
                            g[0] / (k * (1.0 - s))
                        } else {
                            0.0
                        }
                    })
                    .collect();
                acc.push((*scores, ds));
            }
        }
        acc
    }
}

/// Mean binary cross-entropy with logs guarded by [`LOG_EPS`].
pub(crate) fn bce_value(scores: &[f64], labels: &[bool]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            if y {
                s.max(LOG_EPS).ln()
            } else {
                (1.0 - s).max(LOG_EPS).ln()
            }
        })
        .sum();
    -total / labels.len() as f64
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn transpose_buf(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    out
}
