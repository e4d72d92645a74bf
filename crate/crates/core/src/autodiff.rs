//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records a define-by-run graph of f64 matrix operations; the
//! operation set is exactly what the model needs. Nodes are appended in
//! topological order, so [`Tape::backward`] visits them in strict reverse
//! order and accumulates gradients additively for shared inputs. A tape may
//! be backwarded once; a second call is an error. All computation is in
//! 64-bit floats so finite-difference checks have headroom.

use std::cell::{Cell, Ref, RefCell};
use std::sync::Arc;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::SharedGraph;

/// Dense row-major matrix of 64-bit floats.
pub type Tensor = Array2<f64>;

/// Handle to a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Aggregators available to supermodule pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Sum,
    Mean,
    Max,
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    ConcatCols(Vec<NodeId>),
    LeakyRelu(NodeId, f64),
    Elu(NodeId, f64),
    Gather(NodeId, Arc<Vec<usize>>),
    /// Row-wise scaling of an R x F matrix by an R x 1 column.
    ScaleRows(NodeId, NodeId),
    SegmentSum(NodeId, Arc<Vec<usize>>),
    SegmentSoftmax(NodeId, Arc<Vec<usize>>),
    SupPool(NodeId, Arc<Vec<Vec<usize>>>, PoolKind),
    SpMM(Arc<SharedGraph>, NodeId),
    SoftmaxRows(NodeId),
    /// x: N x F plus a 1 x F bias row added to every row.
    BroadcastAddBias(NodeId, NodeId),
    /// logits: C x 1 column, target class index, class weight.
    WeightedCrossEntropy(NodeId, usize, f64),
    /// Frobenius norm of (a - b).
    L2Loss(NodeId, NodeId),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode tape. Single-threaded; build one per forward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Tensor>>>,
    backward_done: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            backward_done: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        debug_assert!(
            value.iter().all(|v| v.is_finite()),
            "non-finite value recorded on tape"
        );
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(nodes.len() - 1)
    }

    fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id.0].needs_grad
    }

    fn value_ref(&self, id: NodeId) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |nodes| &nodes[id.0].value)
    }

    /// Clone of a node's value.
    pub fn value(&self, id: NodeId) -> Tensor {
        self.value_ref(id).clone()
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let v = self.value_ref(id);
        (v.nrows(), v.ncols())
    }

    /// Gradient of the loss with respect to a node, populated by
    /// [`Tape::backward`]. `None` for nodes the loss does not depend on or
    /// that do not track gradients.
    pub fn grad(&self, id: NodeId) -> Option<Tensor> {
        self.grads.borrow().get(id.0).and_then(|g| g.clone())
    }

    /// Trainable leaf; gradients will be tracked through it.
    pub fn param(&self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; no gradient is propagated into it.
    pub fn input(&self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value_ref(a), self.value_ref(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::shape(format!(
                "matmul {}x{} by {}x{}",
                va.nrows(),
                va.ncols(),
                vb.nrows(),
                vb.ncols()
            )));
        }
        let value = va.dot(&*vb);
        let needs = self.needs_grad(a) || self.needs_grad(b);
        drop(va);
        drop(vb);
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    pub fn transpose(&self, a: NodeId) -> NodeId {
        let value = self.value_ref(a).t().to_owned();
        let needs = self.needs_grad(a);
        self.push(value, Op::Transpose(a), needs)
    }

    pub fn add(&self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value_ref(a), self.value_ref(b));
        if va.dim() != vb.dim() {
            return Err(Error::shape(format!(
                "add {:?} to {:?}",
                va.dim(),
                vb.dim()
            )));
        }
        let value = &*va + &*vb;
        let needs = self.needs_grad(a) || self.needs_grad(b);
        drop(va);
        drop(vb);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn scale(&self, a: NodeId, c: f64) -> NodeId {
        let value = self.value_ref(a).mapv(|v| c * v);
        let needs = self.needs_grad(a);
        self.push(value, Op::Scale(a, c), needs)
    }

    /// Sum of all entries, as a 1 x 1 tensor.
    pub fn sum(&self, a: NodeId) -> NodeId {
        let total = self.value_ref(a).sum();
        let needs = self.needs_grad(a);
        self.push(Tensor::from_elem((1, 1), total), Op::Sum(a), needs)
    }

    pub fn concat_cols(&self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols needs at least one input"));
        }
        let nrows = self.value_ref(parts[0]).nrows();
        let mut ncols = 0;
        for &p in parts {
            let v = self.value_ref(p);
            if v.nrows() != nrows {
                return Err(Error::shape("concat_cols row counts differ"));
            }
            ncols += v.ncols();
        }
        let mut value = Tensor::zeros((nrows, ncols));
        let mut offset = 0;
        for &p in parts {
            let v = self.value_ref(p);
            value
                .slice_mut(ndarray::s![.., offset..offset + v.ncols()])
                .assign(&*v);
            offset += v.ncols();
        }
        let needs = parts.iter().any(|&p| self.needs_grad(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), needs))
    }

    pub fn leaky_relu(&self, a: NodeId, slope: f64) -> NodeId {
        let value = self
            .value_ref(a)
            .mapv(|v| if v > 0.0 { v } else { slope * v });
        let needs = self.needs_grad(a);
        self.push(value, Op::LeakyRelu(a, slope), needs)
    }

    pub fn elu(&self, a: NodeId, alpha: f64) -> NodeId {
        let value = self
            .value_ref(a)
            .mapv(|v| if v > 0.0 { v } else { alpha * (v.exp() - 1.0) });
        let needs = self.needs_grad(a);
        self.push(value, Op::Elu(a, alpha), needs)
    }

    /// Select rows by index; indices may repeat.
    pub fn gather(&self, a: NodeId, idx: Arc<Vec<usize>>) -> Result<NodeId> {
        let v = self.value_ref(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= v.nrows()) {
            return Err(Error::shape(format!(
                "gather index {bad} out of range for {} rows",
                v.nrows()
            )));
        }
        let mut value = Tensor::zeros((idx.len(), v.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            value.row_mut(r).assign(&v.row(i));
        }
        let needs = self.needs_grad(a);
        drop(v);
        Ok(self.push(value, Op::Gather(a, idx), needs))
    }

    /// Multiply each row of `x` by the matching entry of the column `s`.
    pub fn scale_rows(&self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let (vx, vs) = (self.value_ref(x), self.value_ref(s));
        if vs.ncols() != 1 || vs.nrows() != vx.nrows() {
            return Err(Error::shape(format!(
                "scale_rows expects {}x1 scales, got {}x{}",
                vx.nrows(),
                vs.nrows(),
                vs.ncols()
            )));
        }
        let mut value = vx.clone();
        for (mut row, &f) in value.rows_mut().into_iter().zip(vs.column(0)) {
            row.mapv_inplace(|v| v * f);
        }
        let needs = self.needs_grad(x) || self.needs_grad(s);
        drop(vx);
        drop(vs);
        Ok(self.push(value, Op::ScaleRows(x, s), needs))
    }

    /// Scatter-add rows of `x` into `n_segments` output rows.
    pub fn segment_sum(
        &self,
        x: NodeId,
        segments: Arc<Vec<usize>>,
        n_segments: usize,
    ) -> Result<NodeId> {
        let v = self.value_ref(x);
        if segments.len() != v.nrows() {
            return Err(Error::shape("segment map length differs from row count"));
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= n_segments) {
            return Err(Error::shape(format!(
                "segment id {bad} out of range {n_segments}"
            )));
        }
        let mut value = Tensor::zeros((n_segments, v.ncols()));
        for (r, &s) in segments.iter().enumerate() {
            let mut out = value.row_mut(s);
            out += &v.row(r);
        }
        let needs = self.needs_grad(x);
        drop(v);
        Ok(self.push(value, Op::SegmentSum(x, segments), needs))
    }

    /// Numerically stable softmax within each segment of a column of
    /// logits. Per-segment outputs sum to one.
    pub fn segment_softmax(&self, logits: NodeId, segments: Arc<Vec<usize>>) -> Result<NodeId> {
        let v = self.value_ref(logits);
        if v.ncols() != 1 {
            return Err(Error::shape("segment_softmax expects an E x 1 column"));
        }
        if segments.len() != v.nrows() {
            return Err(Error::shape("segment map length differs from row count"));
        }
        let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
        let mut seg_max = vec![f64::NEG_INFINITY; n_seg];
        for (r, &s) in segments.iter().enumerate() {
            seg_max[s] = seg_max[s].max(v[(r, 0)]);
        }
        let mut exps = Tensor::zeros((v.nrows(), 1));
        let mut seg_sum = vec![0.0f64; n_seg];
        for (r, &s) in segments.iter().enumerate() {
            let e = (v[(r, 0)] - seg_max[s]).exp();
            exps[(r, 0)] = e;
            seg_sum[s] += e;
        }
        for (r, &s) in segments.iter().enumerate() {
            exps[(r, 0)] /= seg_sum[s];
        }
        let needs = self.needs_grad(logits);
        drop(v);
        Ok(self.push(exps, Op::SegmentSoftmax(logits, segments), needs))
    }

    /// Pool node rows into per-module rows. Modules may overlap; nodes in no
    /// module contribute nowhere.
    pub fn sup_pool(
        &self,
        x: NodeId,
        modules: Arc<Vec<Vec<usize>>>,
        kind: PoolKind,
    ) -> Result<NodeId> {
        let v = self.value_ref(x);
        let c = v.ncols();
        let mut value = Tensor::zeros((modules.len(), c));
        for (d, members) in modules.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::shape(format!("module {d} has no members")));
            }
            if let Some(&bad) = members.iter().find(|&&m| m >= v.nrows()) {
                return Err(Error::shape(format!(
                    "module member {bad} out of range for {} rows",
                    v.nrows()
                )));
            }
            match kind {
                PoolKind::Sum | PoolKind::Mean => {
                    for &m in members {
                        let mut out = value.row_mut(d);
                        out += &v.row(m);
                    }
                    if kind == PoolKind::Mean {
                        let inv = 1.0 / members.len() as f64;
                        value.row_mut(d).mapv_inplace(|val| val * inv);
                    }
                }
                PoolKind::Max => {
                    for j in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        for &m in members {
                            if v[(m, j)] > best {
                                best = v[(m, j)];
                            }
                        }
                        value[(d, j)] = best;
                    }
                }
            }
        }
        let needs = self.needs_grad(x);
        drop(v);
        Ok(self.push(value, Op::SupPool(x, modules, kind), needs))
    }

    /// Product of the binary adjacency with a dense node-feature matrix.
    pub fn spmm(&self, graph: Arc<SharedGraph>, h: NodeId) -> Result<NodeId> {
        let v = self.value_ref(h);
        if v.nrows() != graph.n_nodes() {
            return Err(Error::shape(format!(
                "spmm expects {} rows, got {}",
                graph.n_nodes(),
                v.nrows()
            )));
        }
        let value = adjacency_times(&graph, &v.view());
        let needs = self.needs_grad(h);
        drop(v);
        Ok(self.push(value, Op::SpMM(graph, h), needs))
    }

    /// Row-wise stable softmax.
    pub fn softmax_rows(&self, x: NodeId) -> NodeId {
        let v = self.value_ref(x);
        let mut value = v.clone();
        for mut row in value.rows_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|l| (l - m).exp());
            let s = row.sum();
            row.mapv_inplace(|e| e / s);
        }
        let needs = self.needs_grad(x);
        drop(v);
        self.push(value, Op::SoftmaxRows(x), needs)
    }

    /// Add a 1 x F bias row to every row of an N x F matrix.
    pub fn broadcast_add_bias(&self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value_ref(x), self.value_ref(bias));
        if vb.nrows() != 1 || vb.ncols() != vx.ncols() {
            return Err(Error::shape(format!(
                "bias must be 1x{}, got {}x{}",
                vx.ncols(),
                vb.nrows(),
                vb.ncols()
            )));
        }
        let value = &*vx + &vb.row(0);
        let needs = self.needs_grad(x) || self.needs_grad(bias);
        drop(vx);
        drop(vb);
        Ok(self.push(value, Op::BroadcastAddBias(x, bias), needs))
    }

    /// Weighted cross-entropy of a C x 1 logit column against a target
    /// class, computed via log-sum-exp.
    pub fn weighted_cross_entropy(
        &self,
        logits: NodeId,
        label: usize,
        weight: f64,
    ) -> Result<NodeId> {
        let v = self.value_ref(logits);
        if v.ncols() != 1 {
            return Err(Error::shape("cross entropy expects a C x 1 logit column"));
        }
        if label >= v.nrows() {
            return Err(Error::invalid(format!(
                "label {label} out of range for {} classes",
                v.nrows()
            )));
        }
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + v.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        let loss = weight * (lse - v[(label, 0)]);
        let needs = self.needs_grad(logits);
        drop(v);
        Ok(self.push(
            Tensor::from_elem((1, 1), loss),
            Op::WeightedCrossEntropy(logits, label, weight),
            needs,
        ))
    }

    /// Frobenius norm of the difference `a - b`, as a 1 x 1 tensor.
    pub fn l2_loss(&self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value_ref(a), self.value_ref(b));
        if va.dim() != vb.dim() {
            return Err(Error::shape(format!(
                "l2_loss {:?} vs {:?}",
                va.dim(),
                vb.dim()
            )));
        }
        let norm = va
            .iter()
            .zip(vb.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let needs = self.needs_grad(a) || self.needs_grad(b);
        drop(va);
        drop(vb);
        Ok(self.push(Tensor::from_elem((1, 1), norm), Op::L2Loss(a, b), needs))
    }

    /// Reverse pass from a scalar loss node. Populates gradients for every
    /// node the loss depends on; may be called once per tape.
    pub fn backward(&self, loss: NodeId) -> Result<()> {
        if self.backward_done.get() {
            return Err(Error::invalid("backward already ran on this tape"));
        }
        {
            let v = self.value_ref(loss);
            if v.dim() != (1, 1) {
                return Err(Error::shape(format!(
                    "backward needs a scalar loss, got {:?}",
                    v.dim()
                )));
            }
        }
        self.backward_done.set(true);
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Tensor::from_elem((1, 1), 1.0));

        let add_grad = |grads: &mut Vec<Option<Tensor>>, id: NodeId, g: Tensor| {
            if !nodes[id.0].needs_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => *acc += &g,
                slot @ None => *slot = Some(g),
            }
        };

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].clone() else { continue };
            match &nodes[id].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    add_grad(&mut grads, *a, g.dot(&vb.t()));
                    add_grad(&mut grads, *b, va.t().dot(&g));
                }
                Op::Transpose(a) => {
                    add_grad(&mut grads, *a, g.t().to_owned());
                }
                Op::Add(a, b) => {
                    add_grad(&mut grads, *a, g.clone());
                    add_grad(&mut grads, *b, g);
                }
                Op::Scale(a, c) => {
                    add_grad(&mut grads, *a, g.mapv(|v| c * v));
                }
                Op::Sum(a) => {
                    let shape = nodes[a.0].value.dim();
                    add_grad(&mut grads, *a, Tensor::from_elem(shape, g[(0, 0)]));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = nodes[p.0].value.ncols();
                        let slice = g.slice(ndarray::s![.., offset..offset + w]).to_owned();
                        add_grad(&mut grads, p, slice);
                        offset += w;
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    let va = &nodes[a.0].value;
                    let mut d = g;
                    d.zip_mut_with(va, |gv, &x| {
                        if x <= 0.0 {
                            *gv *= slope;
                        }
                    });
                    add_grad(&mut grads, *a, d);
                }
                Op::Elu(a, alpha) => {
                    let va = &nodes[a.0].value;
                    let mut d = g;
                    d.zip_mut_with(va, |gv, &x| {
                        if x <= 0.0 {
                            *gv *= alpha * x.exp();
                        }
                    });
                    add_grad(&mut grads, *a, d);
                }
                Op::Gather(a, idx) => {
                    let mut d = Tensor::zeros(nodes[a.0].value.dim());
                    for (r, &i) in idx.iter().enumerate() {
                        let mut row = d.row_mut(i);
                        row += &g.row(r);
                    }
                    add_grad(&mut grads, *a, d);
                }
                Op::ScaleRows(x, s) => {
                    let (vx, vs) = (&nodes[x.0].value, &nodes[s.0].value);
                    let mut dx = g.clone();
                    for (mut row, &f) in dx.rows_mut().into_iter().zip(vs.column(0)) {
                        row.mapv_inplace(|v| v * f);
                    }
                    add_grad(&mut grads, *x, dx);
                    let mut ds = Tensor::zeros(vs.dim());
                    for r in 0..vx.nrows() {
                        ds[(r, 0)] = g.row(r).dot(&vx.row(r));
                    }
                    add_grad(&mut grads, *s, ds);
                }
                Op::SegmentSum(x, segments) => {
                    let mut d = Tensor::zeros(nodes[x.0].value.dim());
                    for (r, &s) in segments.iter().enumerate() {
                        d.row_mut(r).assign(&g.row(s));
                    }
                    add_grad(&mut grads, *x, d);
                }
                Op::SegmentSoftmax(x, segments) => {
                    let p = &nodes[id].value;
                    let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
                    let mut seg_dot = vec![0.0f64; n_seg];
                    for (r, &s) in segments.iter().enumerate() {
                        seg_dot[s] += g[(r, 0)] * p[(r, 0)];
                    }
                    let mut d = Tensor::zeros(p.dim());
                    for (r, &s) in segments.iter().enumerate() {
                        d[(r, 0)] = p[(r, 0)] * (g[(r, 0)] - seg_dot[s]);
                    }
                    add_grad(&mut grads, *x, d);
                }
                Op::SupPool(x, modules, kind) => {
                    let vx = &nodes[x.0].value;
                    let mut d = Tensor::zeros(vx.dim());
                    for (m, members) in modules.iter().enumerate() {
                        match kind {
                            PoolKind::Sum => {
                                for &i in members {
                                    let mut row = d.row_mut(i);
                                    row += &g.row(m);
                                }
                            }
                            PoolKind::Mean => {
                                let inv = 1.0 / members.len() as f64;
                                for &i in members {
                                    let mut row = d.row_mut(i);
                                    row.zip_mut_with(&g.row(m), |dv, &gv| *dv += inv * gv);
                                }
                            }
                            PoolKind::Max => {
                                // route gradient to the first argmax member
                                for j in 0..vx.ncols() {
                                    let mut best = members[0];
                                    for &i in &members[1..] {
                                        if vx[(i, j)] > vx[(best, j)] {
                                            best = i;
                                        }
                                    }
                                    d[(best, j)] += g[(m, j)];
                                }
                            }
                        }
                    }
                    add_grad(&mut grads, *x, d);
                }
                Op::SpMM(graph, h) => {
                    // adjacency is symmetric, so dH = A * G
                    add_grad(&mut grads, *h, adjacency_times(graph, &g.view()));
                }
                Op::SoftmaxRows(x) => {
                    let p = &nodes[id].value;
                    let mut d = Tensor::zeros(p.dim());
                    for r in 0..p.nrows() {
                        let dot = g.row(r).dot(&p.row(r));
                        for c in 0..p.ncols() {
                            d[(r, c)] = p[(r, c)] * (g[(r, c)] - dot);
                        }
                    }
                    add_grad(&mut grads, *x, d);
                }
                Op::BroadcastAddBias(x, bias) => {
                    add_grad(&mut grads, *x, g.clone());
                    let col_sums = g.sum_axis(ndarray::Axis(0));
                    let db = col_sums.insert_axis(ndarray::Axis(0));
                    add_grad(&mut grads, *bias, db);
                }
                Op::WeightedCrossEntropy(logits, label, weight) => {
                    let v = &nodes[logits.0].value;
                    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = v.iter().map(|l| (l - m).exp()).sum();
                    let scale = g[(0, 0)] * weight;
                    let mut d = Tensor::zeros(v.dim());
                    for i in 0..v.nrows() {
                        let p = (v[(i, 0)] - m).exp() / denom;
                        let onehot = if i == *label { 1.0 } else { 0.0 };
                        d[(i, 0)] = scale * (p - onehot);
                    }
                    add_grad(&mut grads, *logits, d);
                }
                Op::L2Loss(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let norm = nodes[id].value[(0, 0)];
                    if norm > 0.0 {
                        let scale = g[(0, 0)] / norm;
                        let diff = (va - vb).mapv(|v| v * scale);
                        add_grad(&mut grads, *a, diff.clone());
                        add_grad(&mut grads, *b, diff.mapv(|v| -v));
                    }
                    // at norm == 0 the subgradient 0 is used
                }
            }
        }
        *self.grads.borrow_mut() = grads;
        Ok(())
    }
}

fn adjacency_times(graph: &SharedGraph, h: &ndarray::ArrayView2<f64>) -> Tensor {
    let mut out = Tensor::zeros(h.dim());
    for i in 0..graph.n_nodes() {
        let mut row = out.row_mut(i);
        for &j in graph.neighbors(i) {
            row += &h.row(j);
        }
    }
    out
}
