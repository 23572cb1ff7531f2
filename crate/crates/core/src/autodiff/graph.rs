//! Tape-style reverse-mode differentiation over rank-2 tensors.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward pass is a single reverse sweep.

use super::tensor::{self, matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Full,
    Row,
    Col,
    Scalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId, Bcast),
    Mul(NodeId, NodeId, Bcast),
    Affine(NodeId, f64),
    Concat(Vec<NodeId>),
    Softmax(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    LayerNorm { x: NodeId, inv_std: Vec<f64> },
    RowMean { src: NodeId, groups: Vec<Vec<usize>> },
    CrossEntropy { logits: NodeId, targets: Vec<usize> },
    NllProbs { probs: NodeId, targets: Vec<usize> },
    BceLogits { logits: NodeId, labels: Vec<f64> },
    Sum(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation graph for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    checked: bool,
}

/// Per-node gradient accumulators produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Bcast> {
    let (ar, ac) = a.dims2()?;
    let (br, bc) = b.dims2()?;
    match (br, bc) {
        _ if (br, bc) == (ar, ac) => Ok(Bcast::Full),
        (1, 1) => Ok(Bcast::Scalar),
        (1, c) if c == ac => Ok(Bcast::Row),
        (r, 1) if r == ar => Ok(Bcast::Col),
        _ => Err(shape_err(op, a, b)),
    }
}

fn bcast_index(kind: Bcast, r: usize, c: usize, cols: usize) -> usize {
    match kind {
        Bcast::Full => r * cols + c,
        Bcast::Row => c,
        Bcast::Col => r,
        Bcast::Scalar => 0,
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that verifies every produced value is finite.
    pub fn checked() -> Self {
        Self {
            nodes: Vec::new(),
            checked: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<NodeId> {
        if self.checked && !value.all_finite() {
            return Err(Error::NonFinite(format!("output of {op:?}")));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2()?;
        let (k2, n) = bv.dims2()?;
        if k != k2 {
            return Err(shape_err("matmul", av, bv));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(av.data(), bv.data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::from_raw(vec![m, n], out), Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2()?;
        let (n, k2) = bv.dims2()?;
        if k != k2 {
            return Err(shape_err("matmul_bt", av, bv));
        }
        let mut out = vec![0.0; m * n];
        matmul_bt_acc(av.data(), bv.data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::from_raw(vec![m, n], out), Op::MatMulBt(a, b), rg)
    }

    /// Elementwise sum; `b` may broadcast as a row, a column or a scalar.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "add", |x, y| x + y, false)
    }

    /// Elementwise product; `b` may broadcast as a row, a column or a scalar.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "mul", |x, y| x * y, true)
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        is_mul: bool,
    ) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let kind = broadcast_kind(name, av, bv)?;
        let (rows, cols) = av.dims2()?;
        let (ad, bd) = (av.data(), bv.data());
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                out.push(f(ad[r * cols + c], bd[bcast_index(kind, r, c, cols)]));
            }
        }
        let rg = self.rg(&[a, b]);
        let op = if is_mul {
            Op::Mul(a, b, kind)
        } else {
            Op::Add(a, b, kind)
        };
        self.push(Tensor::from_raw(vec![rows, cols], out), op, rg)
    }

    /// `scale · a + shift`
    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        let av = self.value(a);
        let out: Vec<f64> = av.data().iter().map(|x| scale * x + shift).collect();
        let t = Tensor::from_raw(av.shape().to_vec(), out);
        let rg = self.rg(&[a]);
        self.push(t, Op::Affine(a, scale), rg)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        self.affine(a, s, 0.0)
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or_else(|| Error::Input("concat of nothing".into()))?;
        let (rows, _) = self.value(first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(shape_err("concat", self.value(first), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = self.rg(parts);
        self.push(
            Tensor::from_raw(vec![rows, total], out),
            Op::Concat(parts.to_vec()),
            rg,
        )
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        let (rows, cols) = av.dims2()?;
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            out.extend(tensor::softmax(av.row(r)));
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::from_raw(vec![rows, cols], out), Op::Softmax(a), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        let out = av.data().iter().map(|&x| tensor::sigmoid(x)).collect();
        let t = Tensor::from_raw(av.shape().to_vec(), out);
        let rg = self.rg(&[a]);
        self.push(t, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        let out = av.data().iter().map(|x| x.tanh()).collect();
        let t = Tensor::from_raw(av.shape().to_vec(), out);
        let rg = self.rg(&[a]);
        self.push(t, Op::Tanh(a), rg)
    }

    /// Per-row standardization `(x − mean) / sqrt(var + eps)`, no affine part.
    pub fn layer_norm(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let av = self.value(a);
        let (rows, cols) = av.dims2()?;
        let mut out = Vec::with_capacity(rows * cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = av.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            out.extend(row.iter().map(|x| (x - mean) * inv));
            inv_std.push(inv);
        }
        let rg = self.rg(&[a]);
        self.push(
            Tensor::from_raw(vec![rows, cols], out),
            Op::LayerNorm { x: a, inv_std },
            rg,
        )
    }

    /// Output row `r` is the mean of the source rows listed in `groups[r]`.
    ///
    /// With singleton groups this is an embedding lookup; with contiguous
    /// ranges it averages a span.
    pub fn row_mean(&mut self, src: NodeId, groups: Vec<Vec<usize>>) -> Result<NodeId> {
        let sv = self.value(src);
        let (rows, cols) = sv.dims2()?;
        let mut out = vec![0.0; groups.len() * cols];
        for (g, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::Input("row_mean over an empty group".into()));
            }
            let w = 1.0 / group.len() as f64;
            let dst = &mut out[g * cols..(g + 1) * cols];
            for &i in group {
                if i >= rows {
                    return Err(Error::Input(format!("row {i} out of range for {rows} rows")));
                }
                for (d, s) in dst.iter_mut().zip(sv.row(i)) {
                    *d += s;
                }
            }
            dst.iter_mut().for_each(|d| *d *= w);
        }
        let rg = self.rg(&[src]);
        self.push(
            Tensor::from_raw(vec![groups.len(), cols], out),
            Op::RowMean { src, groups },
            rg,
        )
    }

    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        self.row_mean(table, ids.iter().map(|&i| vec![i]).collect())
    }

    /// Mean over rows of `−log softmax(logits)[t]`, via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        let (rows, cols) = lv.dims2()?;
        if rows != targets.len() || rows == 0 {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: vec![rows, cols],
                right: vec![targets.len()],
            });
        }
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= cols {
                return Err(Error::LabelRange { label: t, width: cols });
            }
            let row = lv.row(r);
            total += tensor::log_sum_exp(row) - row[t];
        }
        let rg = self.rg(&[logits]);
        self.push(
            Tensor::scalar(total / rows as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        )
    }

    /// Mean over rows of `−ln probs[t]` for already-normalized rows.
    pub fn nll_probs(&mut self, probs: NodeId, targets: &[usize]) -> Result<NodeId> {
        let pv = self.value(probs);
        let (rows, cols) = pv.dims2()?;
        if rows != targets.len() || rows == 0 {
            return Err(Error::Shape {
                op: "nll_probs",
                left: vec![rows, cols],
                right: vec![targets.len()],
            });
        }
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= cols {
                return Err(Error::LabelRange { label: t, width: cols });
            }
            total -= pv.get(r, t).ln();
        }
        let rg = self.rg(&[probs]);
        self.push(
            Tensor::scalar(total / rows as f64),
            Op::NllProbs {
                probs,
                targets: targets.to_vec(),
            },
            rg,
        )
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `labels`,
    /// computed from the logits.
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: &[f64]) -> Result<NodeId> {
        let lv = self.value(logits);
        if lv.len() != labels.len() || labels.is_empty() {
            return Err(Error::Shape {
                op: "bce_with_logits",
                left: lv.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let total: f64 = lv
            .data()
            .iter()
            .zip(labels)
            .map(|(&s, &y)| tensor::softplus(s) - y * s)
            .sum();
        let rg = self.rg(&[logits]);
        self.push(
            Tensor::scalar(total / labels.len() as f64),
            Op::BceLogits {
                logits,
                labels: labels.to_vec(),
            },
            rg,
        )
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Reverse sweep from a `[1×1]` root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::Shape {
                op: "backward root",
                left: rv.shape().to_vec(),
                right: vec![1, 1],
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::from_raw(rv.shape().to_vec(), vec![1.0]));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                if self.wants(*a) {
                    let acc = self.acc(grads, *a);
                    matmul_bt_acc(gd, bv.data(), acc, m, n, k);
                }
                if self.wants(*b) {
                    let acc = self.acc(grads, *b);
                    matmul_at_acc(av.data(), gd, acc, m, k, n);
                }
            }
            Op::MatMulBt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.rows(), av.cols());
                let n = bv.rows();
                if self.wants(*a) {
                    let acc = self.acc(grads, *a);
                    matmul_acc(gd, bv.data(), acc, m, n, k);
                }
                if self.wants(*b) {
                    let acc = self.acc(grads, *b);
                    matmul_at_acc(gd, av.data(), acc, m, n, k);
                }
            }
            Op::Add(a, b, kind) => {
                let cols = out.cols();
                if self.wants(*a) {
                    let acc = self.acc(grads, *a);
                    acc.iter_mut().zip(gd).for_each(|(x, y)| *x += y);
                }
                if self.wants(*b) {
                    let acc = self.acc(grads, *b);
                    for (i, &gv) in gd.iter().enumerate() {
                        acc[bcast_index(*kind, i / cols, i % cols, cols)] += gv;
                    }
                }
            }
            Op::Mul(a, b, kind) => {
                let cols = out.cols();
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let bd = bv.data();
                    let acc = self.acc(grads, *a);
                    for (i, &gv) in gd.iter().enumerate() {
                        acc[i] += gv * bd[bcast_index(*kind, i / cols, i % cols, cols)];
                    }
                }
                if self.wants(*b) {
                    let ad = av.data();
                    let acc = self.acc(grads, *b);
                    for (i, &gv) in gd.iter().enumerate() {
                        acc[bcast_index(*kind, i / cols, i % cols, cols)] += gv * ad[i];
                    }
                }
            }
            Op::Affine(a, s) => {
                if self.wants(*a) {
                    let acc = self.acc(grads, *a);
                    acc.iter_mut().zip(gd).for_each(|(x, y)| *x += s * y);
                }
            }
            Op::Concat(parts) => {
                let (rows, total) = (out.rows(), out.cols());
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.wants(p) && w > 0 {
                        let acc = self.acc(grads, p);
                        for r in 0..rows {
                            let src = &gd[r * total + offset..r * total + offset + w];
                            acc[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                    offset += w;
                }
            }
            Op::Softmax(a) => {
                if self.wants(*a) {
                    let cols = out.cols();
                    let acc = self.acc(grads, *a);
                    for r in 0..out.rows() {
                        let y = out.row(r);
                        let gy = &gd[r * cols..(r + 1) * cols];
                        let inner = tensor::dot(y, gy);
                        for c in 0..cols {
                            acc[r * cols + c] += y[c] * (gy[c] - inner);
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if self.wants(*a) {
                    let acc = self.acc(grads, *a);
                    for ((x, &y), &gv) in acc.iter_mut().zip(out.data()).zip(gd) {
                        *x += gv * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if self.wants(*a) {
                    let acc = self.acc(grads, *a);
                    for ((x, &y), &gv) in acc.iter_mut().zip(out.data()).zip(gd) {
                        *x += gv * (1.0 - y * y);
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                if self.wants(*x) {
                    let cols = out.cols();
                    let n = cols as f64;
                    let acc = self.acc(grads, *x);
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let y = out.row(r);
                        let gy = &gd[r * cols..(r + 1) * cols];
                        let sum_g: f64 = gy.iter().sum();
                        let sum_gy = tensor::dot(gy, y);
                        for c in 0..cols {
                            acc[r * cols + c] += inv / n * (n * gy[c] - sum_g - y[c] * sum_gy);
                        }
                    }
                }
            }
            Op::RowMean { src, groups } => {
                if self.wants(*src) {
                    let cols = out.cols();
                    let acc = self.acc(grads, *src);
                    for (gi, group) in groups.iter().enumerate() {
                        let w = 1.0 / group.len() as f64;
                        let gy = &gd[gi * cols..(gi + 1) * cols];
                        for &i in group {
                            acc[i * cols..(i + 1) * cols]
                                .iter_mut()
                                .zip(gy)
                                .for_each(|(x, y)| *x += w * y);
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets } => {
                if self.wants(*logits) {
                    let lv = self.value(*logits);
                    let cols = lv.cols();
                    let scale = gd[0] / targets.len() as f64;
                    let acc = self.acc(grads, *logits);
                    for (r, &t) in targets.iter().enumerate() {
                        let p = tensor::softmax(lv.row(r));
                        for (c, pc) in p.into_iter().enumerate() {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            acc[r * cols + c] += scale * (pc - onehot);
                        }
                    }
                }
            }
            Op::NllProbs { probs, targets } => {
                if self.wants(*probs) {
                    let pv = self.value(*probs);
                    let cols = pv.cols();
                    let scale = gd[0] / targets.len() as f64;
                    let pd = pv.data().to_vec();
                    let acc = self.acc(grads, *probs);
                    for (r, &t) in targets.iter().enumerate() {
                        acc[r * cols + t] -= scale / pd[r * cols + t];
                    }
                }
            }
            Op::BceLogits { logits, labels } => {
                if self.wants(*logits) {
                    let scale = gd[0] / labels.len() as f64;
                    let ld = self.value(*logits).data().to_vec();
                    let acc = self.acc(grads, *logits);
                    for ((x, s), y) in acc.iter_mut().zip(ld).zip(labels) {
                        *x += scale * (tensor::sigmoid(s) - y);
                    }
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let acc = self.acc(grads, *a);
                    acc.iter_mut().for_each(|x| *x += gd[0]);
                }
            }
        }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Tensor>], id: NodeId) -> &'g mut [f64] {
        let shape = self.value(id).shape();
        grads[id.0]
            .get_or_insert_with(|| Tensor::from_raw(shape.to_vec(), vec![0.0; shape.iter().product()]))
            .data_mut()
    }
}
