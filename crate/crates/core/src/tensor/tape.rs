use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use super::kernels;
use super::params::{NamedGradients, ParamId, ParamStore};
use super::Tensor;
use crate::error::{invalid, Error, Result};

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Handle to a node recorded on a particular [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u32,
    index: u32,
}

impl NodeId {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

/// Softmax direction. `Rows` (axis 0) normalizes down each column, `Cols`
/// (axis 1) normalizes across each row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Row groups in CSR layout. Output row `r` of a [`Op::RowMean`] is the mean
/// of the input rows listed in group `r`; an empty group yields zeros.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Groups {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Groups {
    pub fn from_lists<L: AsRef<[usize]>>(lists: &[L]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for l in lists {
            indices.extend_from_slice(l.as_ref());
            offsets.push(indices.len());
        }
        Self { offsets, indices }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn group(&self, r: usize) -> &[usize] {
        &self.indices[self.offsets[r]..self.offsets[r + 1]]
    }

    fn max_index(&self) -> Option<usize> {
        self.indices.iter().copied().max()
    }
}

/// A recorded operation. Inputs refer to earlier nodes of the same tape;
/// masks and index lists are constants captured at record time.
#[derive(Clone, Debug)]
pub enum Op {
    Param(ParamId),
    Constant,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Grouped row mean (neighbourhood aggregation).
    RowMean(NodeId, Arc<Groups>),
    RowConcat(Vec<NodeId>),
    ColConcat(Vec<NodeId>),
    SliceCols {
        input: NodeId,
        start: usize,
        len: usize,
    },
    GatherRows(NodeId, Arc<Vec<usize>>),
    /// Elementwise mean of equally shaped inputs.
    MeanOf(Vec<NodeId>),
    LeakyRelu(NodeId, f64),
    Tanh(NodeId),
    Softmax(NodeId, Axis),
    Exp(NodeId),
    Log(NodeId),
    /// Full contraction of two equally shaped tensors to a scalar.
    InnerProduct(NodeId, NodeId),
    /// Per-row inner product of two `n × d` matrices, giving `n × 1`.
    RowDot(NodeId, NodeId),
    L2Norm(NodeId),
    Square(NodeId),
    ReduceSum(NodeId),
    /// Multiplication by a fixed mask (already scaled for inverted dropout).
    Dropout(NodeId, Arc<Vec<f64>>),
    /// Per-row `log Σ_j m_rj exp(x_rj)` over entries with nonzero mask.
    LogSumExpRows(NodeId, Option<Arc<Vec<f64>>>),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "subtract",
            Op::Hadamard(..) => "hadamard",
            Op::Scale(..) => "scalar-scale",
            Op::RowMean(..) => "row-mean",
            Op::RowConcat(_) => "row-concat",
            Op::ColConcat(_) => "col-concat",
            Op::SliceCols { .. } => "slice-cols",
            Op::GatherRows(..) => "gather-rows",
            Op::MeanOf(_) => "mean-of",
            Op::LeakyRelu(..) => "leaky-relu",
            Op::Tanh(_) => "tanh",
            Op::Softmax(..) => "softmax",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::InnerProduct(..) => "inner-product",
            Op::RowDot(..) => "row-dot",
            Op::L2Norm(_) => "l2-norm",
            Op::Square(_) => "square",
            Op::ReduceSum(_) => "reduce-sum",
            Op::Dropout(..) => "dropout",
            Op::LogSumExpRows(..) => "log-sum-exp-rows",
        }
    }

    pub fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Param(_) | Op::Constant => Vec::new(),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Hadamard(a, b)
            | Op::InnerProduct(a, b)
            | Op::RowDot(a, b) => vec![*a, *b],
            Op::RowConcat(xs) | Op::ColConcat(xs) | Op::MeanOf(xs) => xs.clone(),
            Op::SliceCols { input, .. } => vec![*input],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::RowMean(a, _)
            | Op::GatherRows(a, _)
            | Op::LeakyRelu(a, _)
            | Op::Tanh(a)
            | Op::Softmax(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::L2Norm(a)
            | Op::Square(a)
            | Op::ReduceSum(a)
            | Op::Dropout(a, _)
            | Op::LogSumExpRows(a, _) => vec![*a],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// A recorded forward computation.
///
/// Parameters enter through [`Tape::param`], which snapshots the current
/// value from a [`ParamStore`]; every other node is produced by
/// [`Tape::record`] (or one of the convenience wrappers) and is evaluated
/// immediately.
#[derive(Clone, Debug)]
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
    param_names: Vec<(ParamId, String)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::Domain {
            op,
            detail: format!("expected a matrix, got shape {:?}", t.shape()),
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|&v| f(v)).collect(),
    }
}

fn zip(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(mismatch(op, a, b));
    }
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    })
}

/// Softmax layout as `(outer, len, stride)` groups over the flat buffer.
fn softmax_layout(op: &'static str, t: &Tensor, axis: Axis) -> Result<(usize, usize)> {
    match (t.shape().len(), axis) {
        (1, Axis::Rows) => Ok((t.shape()[0], 1)),
        (2, _) => Ok((t.shape()[0], t.shape()[1])),
        _ => Err(Error::Domain {
            op,
            detail: format!("softmax over {axis:?} unsupported for shape {:?}", t.shape()),
        }),
    }
}

fn softmax_forward(x: &Tensor, axis: Axis) -> Result<Tensor> {
    let (rows, cols) = softmax_layout("softmax", x, axis)?;
    let mut out = vec![0.0; x.len()];
    let (groups, len, stride, step) = match axis {
        Axis::Rows => (cols, rows, 1, cols),
        Axis::Cols => (rows, cols, cols, 1),
    };
    for g in 0..groups {
        let idx = |j: usize| g * stride + j * step;
        let max = (0..len).map(|j| x.data[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..len {
            let e = (x.data[idx(j)] - max).exp();
            out[idx(j)] = e;
            sum += e;
        }
        for j in 0..len {
            out[idx(j)] /= sum;
        }
    }
    Tensor::new(x.shape.clone(), out)
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            param_names: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Whether `node` was recorded on this tape.
    pub fn owns(&self, node: NodeId) -> bool {
        node.tape == self.id && node.index() < self.nodes.len()
    }

    fn check(&self, node: NodeId) -> Result<()> {
        if self.owns(node) {
            Ok(())
        } else {
            Err(Error::UnknownNode(node.index()))
        }
    }

    pub fn value(&self, node: NodeId) -> &Tensor {
        assert!(self.owns(node), "node {} is not on this tape", node.index());
        &self.nodes[node.index()].value
    }

    pub fn op(&self, node: NodeId) -> &Op {
        &self.nodes[node.index()].op
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId {
            tape: self.id,
            index: self.nodes.len() as u32,
        };
        self.nodes.push(Node { op, value });
        id
    }

    /// Introduces a parameter as a leaf. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let node = self.push(Op::Param(id), store.get(id).clone());
        self.param_nodes.insert(id, node);
        self.param_names.push((id, store.name(id).to_string()));
        node
    }

    pub fn param_by_name(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        let id = store.id(name)?;
        Ok(self.param(store, id))
    }

    /// A constant leaf. Gradients never flow into constants.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value)
    }

    /// Records an operation and evaluates it.
    pub fn record(&mut self, op: Op) -> Result<NodeId> {
        if matches!(op, Op::Param(_) | Op::Constant) {
            return Err(invalid("leaves are added with Tape::param or Tape::constant"));
        }
        for input in op.inputs() {
            self.check(input)?;
        }
        let value = self.evaluate(&op)?;
        Ok(self.push(op, value))
    }

    fn v(&self, n: NodeId) -> &Tensor {
        &self.nodes[n.index()].value
    }

    fn evaluate(&self, op: &Op) -> Result<Tensor> {
        let name = op.name();
        let out = match op {
            Op::Param(_) | Op::Constant => unreachable!("leaves are never re-evaluated"),
            Op::MatMul(a, b) => {
                let (a, b) = (self.v(*a), self.v(*b));
                let (n, k) = require_matrix(name, a)?;
                let (k2, m) = require_matrix(name, b)?;
                if k != k2 {
                    return Err(mismatch(name, a, b));
                }
                Tensor::matrix(n, m, kernels::matmul(&a.data, &b.data, n, k, m))?
            }
            Op::Transpose(a) => {
                let a = self.v(*a);
                let (r, c) = require_matrix(name, a)?;
                Tensor::matrix(c, r, kernels::transpose(&a.data, r, c))?
            }
            Op::Add(a, b) => zip(name, self.v(*a), self.v(*b), |x, y| x + y)?,
            Op::Sub(a, b) => zip(name, self.v(*a), self.v(*b), |x, y| x - y)?,
            Op::Hadamard(a, b) => zip(name, self.v(*a), self.v(*b), |x, y| x * y)?,
            Op::Scale(a, s) => map(self.v(*a), |x| x * s),
            Op::RowMean(a, groups) => {
                let a = self.v(*a);
                let (rows, cols) = require_matrix(name, a)?;
                if let Some(max) = groups.max_index() {
                    if max >= rows {
                        return Err(Error::Domain {
                            op: name,
                            detail: format!("group index {max} out of range for {rows} rows"),
                        });
                    }
                }
                let mut out = vec![0.0; groups.len() * cols];
                for r in 0..groups.len() {
                    let g = groups.group(r);
                    if g.is_empty() {
                        continue;
                    }
                    let o = &mut out[r * cols..(r + 1) * cols];
                    for &j in g {
                        kernels::add_into(a.row(j), o);
                    }
                    let inv = 1.0 / g.len() as f64;
                    o.iter_mut().for_each(|v| *v *= inv);
                }
                Tensor::matrix(groups.len(), cols, out)?
            }
            Op::RowConcat(xs) => {
                if xs.is_empty() {
                    return Err(invalid("row-concat of zero tensors"));
                }
                let first = self.v(xs[0]);
                let (_, cols) = require_matrix(name, first)?;
                let mut data = Vec::new();
                let mut rows = 0;
                for &x in xs {
                    let t = self.v(x);
                    let (r, c) = require_matrix(name, t)?;
                    if c != cols {
                        return Err(mismatch(name, first, t));
                    }
                    rows += r;
                    data.extend_from_slice(&t.data);
                }
                Tensor::matrix(rows, cols, data)?
            }
            Op::ColConcat(xs) => {
                if xs.is_empty() {
                    return Err(invalid("col-concat of zero tensors"));
                }
                let first = self.v(xs[0]);
                let (rows, _) = require_matrix(name, first)?;
                let mut total = 0;
                for &x in xs {
                    let t = self.v(x);
                    let (r, c) = require_matrix(name, t)?;
                    if r != rows {
                        return Err(mismatch(name, first, t));
                    }
                    total += c;
                }
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for &x in xs {
                        data.extend_from_slice(self.v(x).row(r));
                    }
                }
                Tensor::matrix(rows, total, data)?
            }
            Op::SliceCols { input, start, len } => {
                let a = self.v(*input);
                let (rows, cols) = require_matrix(name, a)?;
                if start + len > cols {
                    return Err(Error::Domain {
                        op: name,
                        detail: format!("columns {start}..{} out of range for {cols}", start + len),
                    });
                }
                let mut data = Vec::with_capacity(rows * len);
                for r in 0..rows {
                    data.extend_from_slice(&a.row(r)[*start..start + len]);
                }
                Tensor::matrix(rows, *len, data)?
            }
            Op::GatherRows(a, idx) => {
                let a = self.v(*a);
                let (rows, cols) = require_matrix(name, a)?;
                let mut data = Vec::with_capacity(idx.len() * cols);
                for &i in idx.iter() {
                    if i >= rows {
                        return Err(Error::Domain {
                            op: name,
                            detail: format!("row {i} out of range for {rows} rows"),
                        });
                    }
                    data.extend_from_slice(a.row(i));
                }
                Tensor::matrix(idx.len(), cols, data)?
            }
            Op::MeanOf(xs) => {
                if xs.is_empty() {
                    return Err(invalid("mean of zero tensors"));
                }
                let first = self.v(xs[0]);
                let mut acc = vec![0.0; first.len()];
                for &x in xs {
                    let t = self.v(x);
                    if t.shape() != first.shape() {
                        return Err(mismatch(name, first, t));
                    }
                    kernels::add_into(&t.data, &mut acc);
                }
                let inv = 1.0 / xs.len() as f64;
                acc.iter_mut().for_each(|v| *v *= inv);
                Tensor::new(first.shape.clone(), acc)?
            }
            Op::LeakyRelu(a, slope) => map(self.v(*a), |x| if x > 0.0 { x } else { slope * x }),
            Op::Tanh(a) => map(self.v(*a), f64::tanh),
            Op::Softmax(a, axis) => softmax_forward(self.v(*a), *axis)?,
            Op::Exp(a) => map(self.v(*a), f64::exp),
            Op::Log(a) => {
                let a = self.v(*a);
                if let Some(bad) = a.data.iter().find(|&&x| x <= 0.0) {
                    return Err(Error::Domain {
                        op: name,
                        detail: format!("log of non-positive value {bad}"),
                    });
                }
                map(a, f64::ln)
            }
            Op::InnerProduct(a, b) => {
                let (a, b) = (self.v(*a), self.v(*b));
                if a.shape() != b.shape() {
                    return Err(mismatch(name, a, b));
                }
                Tensor::scalar(kernels::dot(&a.data, &b.data))
            }
            Op::RowDot(a, b) => {
                let (a, b) = (self.v(*a), self.v(*b));
                let (rows, _) = require_matrix(name, a)?;
                if a.shape() != b.shape() {
                    return Err(mismatch(name, a, b));
                }
                let data = (0..rows).map(|r| kernels::dot(a.row(r), b.row(r))).collect();
                Tensor::matrix(rows, 1, data)?
            }
            Op::L2Norm(a) => Tensor::scalar(self.v(*a).norm()),
            Op::Square(a) => map(self.v(*a), |x| x * x),
            Op::ReduceSum(a) => Tensor::scalar(self.v(*a).data.iter().sum()),
            Op::Dropout(a, mask) => {
                let a = self.v(*a);
                if mask.len() != a.len() {
                    return Err(Error::ShapeMismatch {
                        op: name,
                        lhs: a.shape().to_vec(),
                        rhs: vec![mask.len()],
                    });
                }
                Tensor::new(
                    a.shape.clone(),
                    a.data.iter().zip(mask.iter()).map(|(x, m)| x * m).collect(),
                )?
            }
            Op::LogSumExpRows(a, mask) => {
                let a = self.v(*a);
                let (rows, cols) = require_matrix(name, a)?;
                if let Some(m) = mask {
                    if m.len() != a.len() {
                        return Err(Error::ShapeMismatch {
                            op: name,
                            lhs: a.shape().to_vec(),
                            rhs: vec![m.len()],
                        });
                    }
                }
                let mut data = Vec::with_capacity(rows);
                for r in 0..rows {
                    let mrow = mask.as_ref().map(|m| &m[r * cols..(r + 1) * cols]);
                    let v = kernels::masked_log_sum_exp(a.row(r), mrow);
                    if v == f64::NEG_INFINITY {
                        return Err(Error::Domain {
                            op: name,
                            detail: format!("row {r} has every entry masked"),
                        });
                    }
                    data.push(v);
                }
                Tensor::matrix(rows, 1, data)?
            }
        };
        if !out.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        Ok(out)
    }

    /// Overwrites the stored value of a parameter leaf. Call [`Tape::replay`]
    /// afterwards to refresh dependent nodes.
    pub fn set_param_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let node = *self
            .param_nodes
            .get(&id)
            .ok_or_else(|| Error::UnknownParam(format!("#{}", id.index())))?;
        let slot = &mut self.nodes[node.index()].value;
        if slot.shape() != value.shape() {
            return Err(mismatch("set-param", slot, &value));
        }
        *slot = value;
        Ok(())
    }

    /// Parameters present on the tape, in the order they were introduced.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &str)> {
        self.param_names.iter().map(|(id, n)| (*id, n.as_str()))
    }

    pub fn param_node(&self, id: ParamId) -> Option<NodeId> {
        self.param_nodes.get(&id).copied()
    }

    /// Recomputes every non-leaf node in recording order.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Param(_) | Op::Constant) {
                continue;
            }
            let value = self.evaluate(&self.nodes[i].op)?;
            self.nodes[i].value = value;
        }
        Ok(())
    }

    /// Reverse-mode gradients of a scalar node with respect to every
    /// parameter leaf that reaches it. Unreachable parameters are absent.
    pub fn gradients(&self, loss: NodeId) -> Result<NamedGradients> {
        self.check(loss)?;
        let lv = self.v(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let end = loss.index();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; end + 1];
        grads[end] = Some(vec![1.0]);
        let mut out = NamedGradients::new();

        for i in (0..=end).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Param(pid) => {
                    let name = self
                        .param_names
                        .iter()
                        .find(|(p, _)| p == pid)
                        .map(|(_, n)| n.clone())
                        .expect("param leaf registered");
                    out.insert(name, Tensor::new(node.value.shape.clone(), g)?);
                }
                Op::Constant => {}
                op => self.backward_op(op, &node.value, &g, &mut grads),
            }
        }
        Ok(out)
    }

    fn backward_op(&self, op: &Op, y: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |n: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            let len = self.v(n).len();
            let slot = grads[n.index()].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match op {
            Op::Param(_) | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.v(*a), self.v(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                acc(*a, &mut |s| kernels::matmul_a_bt_acc(g, &bv.data, n, k, m, s));
                acc(*b, &mut |s| kernels::matmul_at_b_acc(&av.data, g, n, k, m, s));
            }
            Op::Transpose(a) => {
                let (r, c) = (y.rows(), y.cols());
                let gt = kernels::transpose(g, r, c);
                acc(*a, &mut |s| kernels::add_into(&gt, s));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| kernels::add_into(g, s));
                acc(*b, &mut |s| kernels::add_into(g, s));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| kernels::add_into(g, s));
                acc(*b, &mut |s| kernels::axpy(-1.0, g, s));
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.v(*a), self.v(*b));
                acc(*a, &mut |s| {
                    for ((sv, gv), bx) in s.iter_mut().zip(g).zip(&bv.data) {
                        *sv += gv * bx;
                    }
                });
                acc(*b, &mut |s| {
                    for ((sv, gv), ax) in s.iter_mut().zip(g).zip(&av.data) {
                        *sv += gv * ax;
                    }
                });
            }
            Op::Scale(a, f) => acc(*a, &mut |s| kernels::axpy(*f, g, s)),
            Op::RowMean(a, groups) => {
                let cols = y.cols();
                acc(*a, &mut |s| {
                    for r in 0..groups.len() {
                        let grp = groups.group(r);
                        if grp.is_empty() {
                            continue;
                        }
                        let inv = 1.0 / grp.len() as f64;
                        let gr = &g[r * cols..(r + 1) * cols];
                        for &j in grp {
                            kernels::axpy(inv, gr, &mut s[j * cols..(j + 1) * cols]);
                        }
                    }
                });
            }
            Op::RowConcat(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let len = self.v(x).len();
                    let part = &g[offset..offset + len];
                    acc(x, &mut |s| kernels::add_into(part, s));
                    offset += len;
                }
            }
            Op::ColConcat(xs) => {
                let (rows, total) = (y.rows(), y.cols());
                let mut start = 0;
                for &x in xs {
                    let c = self.v(x).cols();
                    acc(x, &mut |s| {
                        for r in 0..rows {
                            let src = &g[r * total + start..r * total + start + c];
                            kernels::add_into(src, &mut s[r * c..(r + 1) * c]);
                        }
                    });
                    start += c;
                }
            }
            Op::SliceCols { input, start, len } => {
                let cols = self.v(*input).cols();
                acc(*input, &mut |s| {
                    for r in 0..y.rows() {
                        let dst = &mut s[r * cols + start..r * cols + start + len];
                        kernels::add_into(&g[r * len..(r + 1) * len], dst);
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                let cols = y.cols();
                acc(*a, &mut |s| {
                    for (r, &i) in idx.iter().enumerate() {
                        kernels::add_into(&g[r * cols..(r + 1) * cols], &mut s[i * cols..(i + 1) * cols]);
                    }
                });
            }
            Op::MeanOf(xs) => {
                let inv = 1.0 / xs.len() as f64;
                for &x in xs {
                    acc(x, &mut |s| kernels::axpy(inv, g, s));
                }
            }
            Op::LeakyRelu(a, slope) => {
                let av = self.v(*a);
                acc(*a, &mut |s| {
                    for ((sv, gv), x) in s.iter_mut().zip(g).zip(&av.data) {
                        *sv += if *x > 0.0 { *gv } else { slope * gv };
                    }
                });
            }
            Op::Tanh(a) => acc(*a, &mut |s| {
                for ((sv, gv), yv) in s.iter_mut().zip(g).zip(&y.data) {
                    *sv += gv * (1.0 - yv * yv);
                }
            }),
            Op::Softmax(a, axis) => {
                let (rows, cols) = if y.shape().len() == 1 {
                    (y.shape()[0], 1)
                } else {
                    (y.rows(), y.cols())
                };
                let (groups, len, stride, step) = match axis {
                    Axis::Rows => (cols, rows, 1, cols),
                    Axis::Cols => (rows, cols, cols, 1),
                };
                acc(*a, &mut |s| {
                    for grp in 0..groups {
                        let idx = |j: usize| grp * stride + j * step;
                        let inner: f64 = (0..len).map(|j| g[idx(j)] * y.data[idx(j)]).sum();
                        for j in 0..len {
                            s[idx(j)] += y.data[idx(j)] * (g[idx(j)] - inner);
                        }
                    }
                });
            }
            Op::Exp(a) => acc(*a, &mut |s| {
                for ((sv, gv), yv) in s.iter_mut().zip(g).zip(&y.data) {
                    *sv += gv * yv;
                }
            }),
            Op::Log(a) => {
                let av = self.v(*a);
                acc(*a, &mut |s| {
                    for ((sv, gv), x) in s.iter_mut().zip(g).zip(&av.data) {
                        *sv += gv / x;
                    }
                });
            }
            Op::InnerProduct(a, b) => {
                let (av, bv) = (self.v(*a), self.v(*b));
                acc(*a, &mut |s| kernels::axpy(g[0], &bv.data, s));
                acc(*b, &mut |s| kernels::axpy(g[0], &av.data, s));
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.v(*a), self.v(*b));
                let cols = av.cols();
                acc(*a, &mut |s| {
                    for (r, gr) in g.iter().enumerate() {
                        kernels::axpy(*gr, bv.row(r), &mut s[r * cols..(r + 1) * cols]);
                    }
                });
                acc(*b, &mut |s| {
                    for (r, gr) in g.iter().enumerate() {
                        kernels::axpy(*gr, av.row(r), &mut s[r * cols..(r + 1) * cols]);
                    }
                });
            }
            Op::L2Norm(a) => {
                let norm = y.item();
                if norm > 0.0 {
                    let av = self.v(*a);
                    acc(*a, &mut |s| kernels::axpy(g[0] / norm, &av.data, s));
                }
            }
            Op::Square(a) => {
                let av = self.v(*a);
                acc(*a, &mut |s| {
                    for ((sv, gv), x) in s.iter_mut().zip(g).zip(&av.data) {
                        *sv += 2.0 * x * gv;
                    }
                });
            }
            Op::ReduceSum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|v| *v += g[0])),
            Op::Dropout(a, mask) => acc(*a, &mut |s| {
                for ((sv, gv), m) in s.iter_mut().zip(g).zip(mask.iter()) {
                    *sv += gv * m;
                }
            }),
            Op::LogSumExpRows(a, mask) => {
                let av = self.v(*a);
                let cols = av.cols();
                acc(*a, &mut |s| {
                    for r in 0..av.rows() {
                        let lse = y.data[r];
                        for c in 0..cols {
                            let k = r * cols + c;
                            if mask.as_ref().is_none_or(|m| m[k] != 0.0) {
                                s[k] += g[r] * (av.data[k] - lse).exp();
                            }
                        }
                    }
                });
            }
        }
    }
}

macro_rules! unary {
    ($($fn_name:ident => $variant:ident),* $(,)?) => {
        impl Tape {
            $(
                pub fn $fn_name(&mut self, a: NodeId) -> Result<NodeId> {
                    self.record(Op::$variant(a))
                }
            )*
        }
    };
}

macro_rules! binary {
    ($($fn_name:ident => $variant:ident),* $(,)?) => {
        impl Tape {
            $(
                pub fn $fn_name(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
                    self.record(Op::$variant(a, b))
                }
            )*
        }
    };
}

unary!(
    transpose => Transpose,
    tanh => Tanh,
    exp => Exp,
    log => Log,
    l2_norm => L2Norm,
    square => Square,
    reduce_sum => ReduceSum,
);

binary!(
    matmul => MatMul,
    add => Add,
    sub => Sub,
    hadamard => Hadamard,
    inner_product => InnerProduct,
    row_dot => RowDot,
);

impl Tape {
    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.record(Op::Scale(a, factor))
    }

    pub fn row_mean(&mut self, a: NodeId, groups: Arc<Groups>) -> Result<NodeId> {
        self.record(Op::RowMean(a, groups))
    }

    pub fn row_concat(&mut self, xs: Vec<NodeId>) -> Result<NodeId> {
        self.record(Op::RowConcat(xs))
    }

    pub fn col_concat(&mut self, xs: Vec<NodeId>) -> Result<NodeId> {
        self.record(Op::ColConcat(xs))
    }

    pub fn slice_cols(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.record(Op::SliceCols { input, start, len })
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: Arc<Vec<usize>>) -> Result<NodeId> {
        self.record(Op::GatherRows(a, idx))
    }

    pub fn mean_of(&mut self, xs: Vec<NodeId>) -> Result<NodeId> {
        self.record(Op::MeanOf(xs))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        self.record(Op::LeakyRelu(a, slope))
    }

    pub fn softmax(&mut self, a: NodeId, axis: Axis) -> Result<NodeId> {
        self.record(Op::Softmax(a, axis))
    }

    pub fn dropout(&mut self, a: NodeId, mask: Arc<Vec<f64>>) -> Result<NodeId> {
        self.record(Op::Dropout(a, mask))
    }

    pub fn log_sum_exp_rows(&mut self, a: NodeId, mask: Option<Arc<Vec<f64>>>) -> Result<NodeId> {
        self.record(Op::LogSumExpRows(a, mask))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn matmul_shape_algebra() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = t.constant(Tensor::matrix(3, 2, vec![1., 0., 0., 1., 1., 1.]).unwrap());
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).shape(), &[2, 2]);
        close(t.value(c).data(), &[4., 5., 10., 11.]);
    }

    #[test]
    fn matmul_mismatch_names_op_and_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn leaky_relu_definition() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
        let y = t.leaky_relu(x, 0.01).unwrap();
        close(t.value(y).data(), &[-0.01, 2.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![3], vec![0.0; 3]).unwrap());
        let y = t.softmax(x, Axis::Rows).unwrap();
        close(t.value(y).data(), &[1.0 / 3.0; 3]);
    }

    #[test]
    fn log_of_non_positive_is_domain_error() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row_vector(vec![1.0, 0.0]));
        assert!(matches!(t.log(x), Err(Error::Domain { op: "log", .. })));
    }

    #[test]
    fn square_sum_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::row_vector(vec![3.0])).unwrap();
        let mut t = Tape::new();
        let x = t.param(&store, id);
        let sq = t.square(x).unwrap();
        let l = t.reduce_sum(sq).unwrap();
        let g = t.gradients(l).unwrap();
        close(g.get("x").unwrap().data(), &[6.0]);
    }

    #[test]
    fn inner_product_gradient_is_other_argument() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::row_vector(vec![1.0, 2.0])).unwrap();
        let mut t = Tape::new();
        let an = t.param(&store, a);
        let b = t.constant(Tensor::row_vector(vec![5.0, 7.0]));
        let l = t.inner_product(an, b).unwrap();
        assert_eq!(t.value(l).item(), 19.0);
        let g = t.gradients(l).unwrap();
        close(g.get("a").unwrap().data(), &[5.0, 7.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row_vector(vec![1.0, 2.0]));
        assert!(matches!(t.gradients(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn foreign_node_rejected() {
        let mut a = Tape::new();
        let b = Tape::new();
        let x = a.constant(Tensor::scalar(1.0));
        assert!(matches!(b.gradients(x), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn unreachable_params_are_absent() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(1.0)).unwrap();
        let b = store.add("b", Tensor::scalar(2.0)).unwrap();
        let mut t = Tape::new();
        let an = t.param(&store, a);
        let _ = t.param(&store, b);
        let l = t.square(an).unwrap();
        let g = t.gradients(l).unwrap();
        assert!(g.get("a").is_some());
        assert!(g.get("b").is_none());
    }

    #[test]
    fn row_mean_empty_group_is_zero() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(2, 2, vec![2., 0., 0., 2.]).unwrap());
        let groups = Arc::new(Groups::from_lists(&[vec![0, 1], vec![]]));
        let y = t.row_mean(x, groups).unwrap();
        close(t.value(y).data(), &[1., 1., 0., 0.]);
    }

    #[test]
    fn fully_masked_row_is_an_error() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(1, 2, vec![0., 0.]).unwrap());
        let mask = Some(Arc::new(vec![0.0, 0.0]));
        assert!(t.log_sum_exp_rows(x, mask).is_err());
    }
}
