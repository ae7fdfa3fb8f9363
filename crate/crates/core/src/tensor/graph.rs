//! Append-only computation tape for reverse-mode differentiation.
//!
//! Nodes are recorded in construction order, which is already a
//! topological order, so backward is a single reverse sweep that
//! visits every node exactly once. The tape is rebuilt for every
//! forward pass; parameters live outside and are bound in as leaves.

use super::kernels;
use super::{Real, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Matmul(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    VecMat(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRows(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softmax(NodeId, usize),
    LogSoftmax(NodeId),
    Embed(NodeId, Vec<usize>),
    Row(NodeId, usize),
    StackRows(Vec<NodeId>),
    Concat(NodeId, NodeId),
    PairConcatRows(NodeId),
    Conv1dSame(NodeId, NodeId),
    SumAll(NodeId),
    Pick(NodeId, usize),
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated by [`Graph::backward`], if any has reached
    /// this node.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> NodeId {
        debug_assert!(
            value.is_finite(),
            "non-finite value produced by {:?}",
            op_name(&op)
        );
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn needs2(&self, a: NodeId, b: NodeId) -> bool {
        self.needs(a) || self.needs(b)
    }

    /// Adds a trainable leaf; its gradient is retrievable after backward.
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, true, Op::Leaf)
    }

    /// Adds a constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, false, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let mut out = Tensor::zeros(&[m, n]);
        kernels::matmul_into(va.data(), vb.data(), m, k, n, out.data_mut());
        let rg = self.needs2(a, b);
        Ok(self.push(out, rg, Op::Matmul(a, b)))
    }

    /// `[m x k] . [k] -> [m]`
    pub fn matvec(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let (va, vv) = (self.value(a), self.value(v));
        if va.rank() != 2 || vv.rank() != 1 || va.cols() != vv.len() {
            return Err(TensorError::ShapeMismatch {
                op: "matvec",
                lhs: va.shape().to_vec(),
                rhs: vv.shape().to_vec(),
            });
        }
        let (m, k) = (va.rows(), va.cols());
        let mut out = Tensor::zeros(&[m]);
        kernels::matvec_into(va.data(), vv.data(), m, k, out.data_mut());
        let rg = self.needs2(a, v);
        Ok(self.push(out, rg, Op::MatVec(a, v)))
    }

    /// `[k] . [k x n] -> [n]`
    pub fn vecmat(&mut self, v: NodeId, a: NodeId) -> Result<NodeId> {
        let (vv, va) = (self.value(v), self.value(a));
        if vv.rank() != 1 || va.rank() != 2 || vv.len() != va.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "vecmat",
                lhs: vv.shape().to_vec(),
                rhs: va.shape().to_vec(),
            });
        }
        let (k, n) = (va.rows(), va.cols());
        let mut out = Tensor::zeros(&[n]);
        kernels::vecmat_into(vv.data(), va.data(), k, n, out.data_mut());
        let rg = self.needs2(v, a);
        Ok(self.push(out, rg, Op::VecMat(v, a)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut out = va.clone();
        out.add_assign(vb);
        let rg = self.needs2(a, b);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    /// Broadcasts a `[n]` vector over every row of a `[r x n]` matrix.
    pub fn add_rows(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (vm, vv) = (self.value(m), self.value(v));
        if vm.rank() != 2 || vv.rank() != 1 || vm.cols() != vv.len() {
            return Err(TensorError::ShapeMismatch {
                op: "add_rows",
                lhs: vm.shape().to_vec(),
                rhs: vv.shape().to_vec(),
            });
        }
        let n = vm.cols();
        let mut out = vm.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(vv.data().iter()) {
                *o += b;
            }
        }
        let rg = self.needs2(m, v);
        Ok(self.push(out, rg, Op::AddRows(m, v)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut out = va.clone();
        for (o, &b) in out.data_mut().iter_mut().zip(vb.data().iter()) {
            *o *= b;
        }
        let rg = self.needs2(a, b);
        Ok(self.push(out, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let out = self.value(a).map(|v| v * c);
        let rg = self.needs(a);
        self.push(out, rg, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|v| T::one() / (T::one() + (-v).exp()));
        let rg = self.needs(a);
        self.push(out, rg, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|v| v.tanh());
        let rg = self.needs(a);
        self.push(out, rg, Op::Tanh(a))
    }

    /// Numerically stable softmax along `axis`. Rank-1 tensors use
    /// axis 0; rank-2 tensors normalize rows (axis 1) or columns
    /// (axis 0).
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let va = self.value(a);
        if axis >= va.rank() {
            return Err(TensorError::InvalidShape {
                shape: va.shape().to_vec(),
                reason: format!("softmax axis {axis} out of range"),
            });
        }
        let mut out = va.clone();
        for_each_lane(out.shape().to_vec(), axis, |lane| {
            softmax_lane(out.data_mut(), &lane);
        });
        let rg = self.needs(a);
        Ok(self.push(out, rg, Op::Softmax(a, axis)))
    }

    /// Stable log-softmax over a rank-1 tensor.
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.rank() != 1 {
            return Err(TensorError::InvalidShape {
                shape: va.shape().to_vec(),
                reason: "log_softmax expects a rank-1 tensor".into(),
            });
        }
        let mut out = va.clone();
        log_softmax_slice(out.data_mut());
        let rg = self.needs(a);
        Ok(self.push(out, rg, Op::LogSoftmax(a)))
    }

    /// Gathers rows of `table` at `ids`; backward scatters into the
    /// selected rows only.
    pub fn embed(&mut self, table: NodeId, ids: &[u32]) -> Result<NodeId> {
        let vt = self.value(table);
        if vt.rank() != 2 {
            return Err(TensorError::InvalidShape {
                shape: vt.shape().to_vec(),
                reason: "embedding table must be rank-2".into(),
            });
        }
        let (v, e) = (vt.rows(), vt.cols());
        let mut idx = Vec::with_capacity(ids.len());
        for &id in ids {
            let id = id as usize;
            if id >= v {
                return Err(TensorError::OutOfVocab { id, vocab: v });
            }
            idx.push(id);
        }
        if idx.is_empty() {
            return Err(TensorError::InvalidShape {
                shape: vec![0],
                reason: "embedding lookup needs at least one id".into(),
            });
        }
        let mut data = Vec::with_capacity(idx.len() * e);
        for &i in &idx {
            data.extend_from_slice(vt.row(i));
        }
        let out = Tensor::new(vec![idx.len(), e], data)?;
        let rg = self.needs(table);
        Ok(self.push(out, rg, Op::Embed(table, idx)))
    }

    pub fn row(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        let va = self.value(a);
        if va.rank() != 2 {
            return Err(TensorError::InvalidShape {
                shape: va.shape().to_vec(),
                reason: "row() expects a rank-2 tensor".into(),
            });
        }
        if i >= va.rows() {
            return Err(TensorError::IndexOutOfBounds {
                index: i,
                len: va.rows(),
            });
        }
        let out = Tensor::new(vec![va.cols()], va.row(i).to_vec())?;
        let rg = self.needs(a);
        Ok(self.push(out, rg, Op::Row(a, i)))
    }

    /// Stacks equal-length rank-1 nodes into a `[rows x n]` matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(TensorError::InvalidShape {
                shape: vec![0],
                reason: "stack_rows needs at least one row".into(),
            });
        }
        let n = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * n);
        let mut rg = false;
        for &r in rows {
            let vr = self.value(r);
            if vr.rank() != 1 || vr.len() != n {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_rows",
                    lhs: vec![n],
                    rhs: vr.shape().to_vec(),
                });
            }
            data.extend_from_slice(vr.data());
            rg |= self.needs(r);
        }
        let out = Tensor::new(vec![rows.len(), n], data)?;
        Ok(self.push(out, rg, Op::StackRows(rows.to_vec())))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 1 || vb.rank() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(va.len() + vb.len());
        data.extend_from_slice(va.data());
        data.extend_from_slice(vb.data());
        let out = Tensor::new(vec![data.len()], data)?;
        let rg = self.needs2(a, b);
        Ok(self.push(out, rg, Op::Concat(a, b)))
    }

    /// Concatenates adjacent row pairs: `[t x n] -> [ceil(t/2) x 2n]`.
    /// Odd row counts repeat the final row as padding.
    pub fn pair_concat_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.rank() != 2 {
            return Err(TensorError::InvalidShape {
                shape: va.shape().to_vec(),
                reason: "pair_concat_rows expects a rank-2 tensor".into(),
            });
        }
        let (t, n) = (va.rows(), va.cols());
        let t_out = t.div_ceil(2);
        let mut data = Vec::with_capacity(t_out * 2 * n);
        for r in 0..t_out {
            data.extend_from_slice(va.row(2 * r));
            data.extend_from_slice(va.row((2 * r + 1).min(t - 1)));
        }
        let out = Tensor::new(vec![t_out, 2 * n], data)?;
        let rg = self.needs(a);
        Ok(self.push(out, rg, Op::PairConcatRows(a)))
    }

    /// Same-length 1-D convolution with zero padding. `signal` is
    /// `[t]` or `[t x 1]`; `kernel` is `[k]` (one channel) or
    /// `[f x k]`; output is `[t x f]`. The width `k` must be odd.
    pub fn conv1d_same(&mut self, signal: NodeId, kernel: NodeId) -> Result<NodeId> {
        let vs = self.value(signal);
        let vk = self.value(kernel);
        let t = match vs.rank() {
            1 => vs.len(),
            2 if vs.cols() == 1 => vs.rows(),
            _ => {
                return Err(TensorError::InvalidShape {
                    shape: vs.shape().to_vec(),
                    reason: "conv1d_same signal must be [t] or [t x 1]".into(),
                })
            }
        };
        let (f, k) = match vk.rank() {
            1 => (1, vk.len()),
            2 => (vk.rows(), vk.cols()),
            _ => {
                return Err(TensorError::InvalidShape {
                    shape: vk.shape().to_vec(),
                    reason: "conv1d_same kernel must be [k] or [f x k]".into(),
                })
            }
        };
        if k % 2 == 0 {
            return Err(TensorError::EvenKernel { width: k });
        }
        let c = k / 2;
        let mut data = vec![T::zero(); t * f];
        for ti in 0..t {
            for fi in 0..f {
                let mut acc = T::zero();
                for j in 0..k {
                    let src = ti + j;
                    if src >= c && src - c < t {
                        acc += vk.data()[fi * k + j] * vs.data()[src - c];
                    }
                }
                data[ti * f + fi] = acc;
            }
        }
        let out = Tensor::new(vec![t, f], data)?;
        let rg = self.needs2(signal, kernel);
        Ok(self.push(out, rg, Op::Conv1dSame(signal, kernel)))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let mut acc = T::zero();
        for &v in self.value(a).data() {
            acc += v;
        }
        let rg = self.needs(a);
        self.push(Tensor::scalar(acc), rg, Op::SumAll(a))
    }

    /// Selects one element of a rank-1 tensor as a scalar.
    pub fn pick(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let va = self.value(a);
        if va.rank() != 1 {
            return Err(TensorError::InvalidShape {
                shape: va.shape().to_vec(),
                reason: "pick expects a rank-1 tensor".into(),
            });
        }
        if index >= va.len() {
            return Err(TensorError::IndexOutOfBounds {
                index,
                len: va.len(),
            });
        }
        let out = Tensor::scalar(va.data()[index]);
        let rg = self.needs(a);
        Ok(self.push(out, rg, Op::Pick(a, index)))
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate into
    /// each `requires_grad` node until [`Graph::zero_grads`] is called.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.value(loss).shape().to_vec(),
            });
        }
        let n = self.nodes.len();
        let mut scratch: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        scratch[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..n).rev() {
            let Some(out_grad) = scratch[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.propagate(i, &out_grad, &mut scratch);
                match &mut self.nodes[i].grad {
                    Some(g) => g.add_assign(&out_grad),
                    slot @ None => *slot = Some(out_grad),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, d: &Tensor<T>, scratch: &mut [Option<Tensor<T>>]) {
        let nodes = &self.nodes;
        let acc = |scratch: &mut [Option<Tensor<T>>], id: NodeId| -> Option<()> {
            if !nodes[id.0].requires_grad {
                return None;
            }
            if scratch[id.0].is_none() {
                scratch[id.0] = Some(Tensor::zeros(nodes[id.0].value.shape()));
            }
            Some(())
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n2) = (va.rows(), va.cols(), vb.cols());
                if acc(scratch, *a).is_some() {
                    // dA += dC . B^T
                    let ga = scratch[a.0].as_mut().unwrap().data_mut();
                    for r in 0..m {
                        for p in 0..k {
                            let mut s = T::zero();
                            for j in 0..n2 {
                                s += d.data()[r * n2 + j] * vb.data()[p * n2 + j];
                            }
                            ga[r * k + p] += s;
                        }
                    }
                }
                if acc(scratch, *b).is_some() {
                    // dB += A^T . dC
                    let gb = scratch[b.0].as_mut().unwrap().data_mut();
                    for p in 0..k {
                        for j in 0..n2 {
                            let mut s = T::zero();
                            for r in 0..m {
                                s += va.data()[r * k + p] * d.data()[r * n2 + j];
                            }
                            gb[p * n2 + j] += s;
                        }
                    }
                }
            }
            Op::MatVec(a, v) => {
                let (va, vv) = (&nodes[a.0].value, &nodes[v.0].value);
                let (m, k) = (va.rows(), va.cols());
                if acc(scratch, *a).is_some() {
                    let ga = scratch[a.0].as_mut().unwrap().data_mut();
                    kernels::outer_add_into(d.data(), vv.data(), ga);
                }
                if acc(scratch, *v).is_some() {
                    let gv = scratch[v.0].as_mut().unwrap().data_mut();
                    for r in 0..m {
                        let dr = d.data()[r];
                        for p in 0..k {
                            gv[p] += va.data()[r * k + p] * dr;
                        }
                    }
                }
            }
            Op::VecMat(v, a) => {
                let (vv, va) = (&nodes[v.0].value, &nodes[a.0].value);
                let (k, n2) = (va.rows(), va.cols());
                if acc(scratch, *v).is_some() {
                    let gv = scratch[v.0].as_mut().unwrap().data_mut();
                    for p in 0..k {
                        let mut s = T::zero();
                        for j in 0..n2 {
                            s += va.data()[p * n2 + j] * d.data()[j];
                        }
                        gv[p] += s;
                    }
                }
                if acc(scratch, *a).is_some() {
                    let ga = scratch[a.0].as_mut().unwrap().data_mut();
                    kernels::outer_add_into(vv.data(), d.data(), ga);
                }
            }
            Op::Add(a, b) => {
                for id in [a, b] {
                    if acc(scratch, *id).is_some() {
                        scratch[id.0].as_mut().unwrap().add_assign(d);
                    }
                }
            }
            Op::AddRows(m, v) => {
                if acc(scratch, *m).is_some() {
                    scratch[m.0].as_mut().unwrap().add_assign(d);
                }
                if acc(scratch, *v).is_some() {
                    let n2 = nodes[v.0].value.len();
                    let gv = scratch[v.0].as_mut().unwrap().data_mut();
                    for row in d.data().chunks(n2) {
                        for (g, &x) in gv.iter_mut().zip(row.iter()) {
                            *g += x;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                if acc(scratch, *a).is_some() {
                    let ga = scratch[a.0].as_mut().unwrap().data_mut();
                    for ((g, &x), &bv) in ga.iter_mut().zip(d.data()).zip(vb.data()) {
                        *g += x * bv;
                    }
                }
                if acc(scratch, *b).is_some() {
                    let gb = scratch[b.0].as_mut().unwrap().data_mut();
                    for ((g, &x), &av) in gb.iter_mut().zip(d.data()).zip(va.data()) {
                        *g += x * av;
                    }
                }
            }
            Op::Scale(a, c) => {
                if acc(scratch, *a).is_some() {
                    let ga = scratch[a.0].as_mut().unwrap().data_mut();
                    for (g, &x) in ga.iter_mut().zip(d.data()) {
                        *g += x * *c;
                    }
                }
            }
            Op::Sigmoid(a) => {
                if acc(scratch, *a).is_some() {
                    let y = &nodes[i].value;
                    let ga = scratch[a.0].as_mut().unwrap().data_mut();
                    for ((g, &x), &yv) in ga.iter_mut().zip(d.data()).zip(y.data()) {
                        *g += x * yv * (T::one() - yv);
                    }
                }
            }
            Op::Tanh(a) => {
                if acc(scratch, *a).is_some() {
                    let y = &nodes[i].value;
                    let ga = scratch[a.0].as_mut().unwrap().data_mut();
                    for ((g, &x), &yv) in ga.iter_mut().zip(d.data()).zip(y.data()) {
                        *g += x * (T::one() - yv * yv);
                    }
                }
            }
            Op::Softmax(a, axis) => {
                if acc(scratch, *a).is_some() {
                    let y = &nodes[i].value;
                    let shape = y.shape().to_vec();
                    let axis = *axis;
                    let mut ga = scratch[a.0].take().unwrap();
                    for_each_lane(shape, axis, |lane| {
                        let mut dot = T::zero();
                        for &p in &lane {
                            dot += d.data()[p] * y.data()[p];
                        }
                        for &p in &lane {
                            ga.data_mut()[p] += y.data()[p] * (d.data()[p] - dot);
                        }
                    });
                    scratch[a.0] = Some(ga);
                }
            }
            Op::LogSoftmax(a) => {
                if acc(scratch, *a).is_some() {
                    let y = &nodes[i].value;
                    let mut dsum = T::zero();
                    for &x in d.data() {
                        dsum += x;
                    }
                    let ga = scratch[a.0].as_mut().unwrap().data_mut();
                    for ((g, &x), &yv) in ga.iter_mut().zip(d.data()).zip(y.data()) {
                        *g += x - yv.exp() * dsum;
                    }
                }
            }
            Op::Embed(table, idx) => {
                if acc(scratch, *table).is_some() {
                    let e = nodes[table.0].value.cols();
                    let gt = scratch[table.0].as_mut().unwrap().data_mut();
                    for (r, &row) in idx.iter().enumerate() {
                        let src = &d.data()[r * e..(r + 1) * e];
                        let dst = &mut gt[row * e..(row + 1) * e];
                        for (g, &x) in dst.iter_mut().zip(src.iter()) {
                            *g += x;
                        }
                    }
                }
            }
            Op::Row(a, r) => {
                if acc(scratch, *a).is_some() {
                    let n2 = nodes[a.0].value.cols();
                    let ga = scratch[a.0].as_mut().unwrap().data_mut();
                    let dst = &mut ga[r * n2..(r + 1) * n2];
                    for (g, &x) in dst.iter_mut().zip(d.data()) {
                        *g += x;
                    }
                }
            }
            Op::StackRows(rows) => {
                let n2 = d.cols();
                for (r, id) in rows.iter().enumerate() {
                    if acc(scratch, *id).is_some() {
                        let g = scratch[id.0].as_mut().unwrap().data_mut();
                        let src = &d.data()[r * n2..(r + 1) * n2];
                        for (gv, &x) in g.iter_mut().zip(src.iter()) {
                            *gv += x;
                        }
                    }
                }
            }
            Op::Concat(a, b) => {
                let la = nodes[a.0].value.len();
                if acc(scratch, *a).is_some() {
                    let ga = scratch[a.0].as_mut().unwrap().data_mut();
                    for (g, &x) in ga.iter_mut().zip(&d.data()[..la]) {
                        *g += x;
                    }
                }
                if acc(scratch, *b).is_some() {
                    let gb = scratch[b.0].as_mut().unwrap().data_mut();
                    for (g, &x) in gb.iter_mut().zip(&d.data()[la..]) {
                        *g += x;
                    }
                }
            }
            Op::PairConcatRows(a) => {
                if acc(scratch, *a).is_some() {
                    let (t, n2) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
                    let ga = scratch[a.0].as_mut().unwrap().data_mut();
                    let t_out = t.div_ceil(2);
                    for r in 0..t_out {
                        let drow = d.row(r);
                        let first = 2 * r;
                        let second = (2 * r + 1).min(t - 1);
                        for (g, &x) in ga[first * n2..(first + 1) * n2]
                            .iter_mut()
                            .zip(&drow[..n2])
                        {
                            *g += x;
                        }
                        for (g, &x) in ga[second * n2..(second + 1) * n2]
                            .iter_mut()
                            .zip(&drow[n2..])
                        {
                            *g += x;
                        }
                    }
                }
            }
            Op::Conv1dSame(signal, kernel) => {
                let vs = &nodes[signal.0].value;
                let vk = &nodes[kernel.0].value;
                let t = vs.len();
                let (f, k) = if vk.rank() == 1 {
                    (1, vk.len())
                } else {
                    (vk.rows(), vk.cols())
                };
                let c = k / 2;
                if acc(scratch, *signal).is_some() {
                    let gs = scratch[signal.0].as_mut().unwrap().data_mut();
                    for ti in 0..t {
                        for fi in 0..f {
                            let dv = d.data()[ti * f + fi];
                            for j in 0..k {
                                let src = ti + j;
                                if src >= c && src - c < t {
                                    gs[src - c] += dv * vk.data()[fi * k + j];
                                }
                            }
                        }
                    }
                }
                if acc(scratch, *kernel).is_some() {
                    let gk = scratch[kernel.0].as_mut().unwrap().data_mut();
                    for ti in 0..t {
                        for fi in 0..f {
                            let dv = d.data()[ti * f + fi];
                            for j in 0..k {
                                let src = ti + j;
                                if src >= c && src - c < t {
                                    gk[fi * k + j] += dv * vs.data()[src - c];
                                }
                            }
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if acc(scratch, *a).is_some() {
                    let dv = d.data()[0];
                    let ga = scratch[a.0].as_mut().unwrap().data_mut();
                    for g in ga.iter_mut() {
                        *g += dv;
                    }
                }
            }
            Op::Pick(a, index) => {
                if acc(scratch, *a).is_some() {
                    scratch[a.0].as_mut().unwrap().data_mut()[*index] += d.data()[0];
                }
            }
        }
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Matmul(..) => "matmul",
        Op::MatVec(..) => "matvec",
        Op::VecMat(..) => "vecmat",
        Op::Add(..) => "add",
        Op::AddRows(..) => "add_rows",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Sigmoid(..) => "sigmoid",
        Op::Tanh(..) => "tanh",
        Op::Softmax(..) => "softmax",
        Op::LogSoftmax(..) => "log_softmax",
        Op::Embed(..) => "embed",
        Op::Row(..) => "row",
        Op::StackRows(..) => "stack_rows",
        Op::Concat(..) => "concat",
        Op::PairConcatRows(..) => "pair_concat_rows",
        Op::Conv1dSame(..) => "conv1d_same",
        Op::SumAll(..) => "sum_all",
        Op::Pick(..) => "pick",
    }
}

/// Calls `f` with the flat indices of every lane along `axis`.
fn for_each_lane(shape: Vec<usize>, axis: usize, mut f: impl FnMut(Vec<usize>)) {
    let lane_len = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let outer_stride: usize = shape[axis..].iter().product();
    for o in 0..outer {
        for s in 0..stride {
            let lane: Vec<usize> = (0..lane_len)
                .map(|l| o * outer_stride + l * stride + s)
                .collect();
            f(lane);
        }
    }
}

fn softmax_lane<T: Real>(data: &mut [T], lane: &[usize]) {
    let mut max = data[lane[0]];
    for &p in lane {
        if data[p] > max {
            max = data[p];
        }
    }
    let mut sum = T::zero();
    for &p in lane {
        let e = (data[p] - max).exp();
        data[p] = e;
        sum += e;
    }
    for &p in lane {
        data[p] = data[p] / sum;
    }
}

fn log_softmax_slice<T: Real>(data: &mut [T]) {
    let mut max = data[0];
    for &v in data.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = T::zero();
    for &v in data.iter() {
        sum += (v - max).exp();
    }
    let log_z = max + sum.ln();
    for v in data.iter_mut() {
        *v = *v - log_z;
    }
}

#[cfg(test)]
mod tests {
    use super::super::finite_diff_check;
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn t1(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i2 = g.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let a = g.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = g.matmul(i2, a).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_projector_zeroes_second_row() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let a = g.constant(Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let c = g.matmul(p, a).unwrap();
        assert_eq!(g.value(c).data(), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        let mut rng = StdRng::seed_from_u64(7);
        let a: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let na = g.constant(Tensor::new(vec![3, 4], a.clone()).unwrap());
        let nb = g.constant(Tensor::new(vec![4, 2], b.clone()).unwrap());
        let c = g.matmul(na, nb).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut want = 0.0;
                for p in 0..4 {
                    want += a[i * 4 + p] * b[p * 2 + j];
                }
                assert!((g.value(c).data()[i * 2 + j] - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 2]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn sigmoid_and_tanh_at_zero() {
        let mut g = Graph::new();
        let x = g.constant(t1(&[0.0]));
        let s = g.sigmoid(x);
        let t = g.tanh(x);
        assert_eq!(g.value(s).data()[0], 0.5);
        assert_eq!(g.value(t).data()[0], 0.0);
    }

    #[test]
    fn softmax_symmetry_and_overflow() {
        let mut g = Graph::new();
        let a = g.constant(t1(&[0.0, 0.0]));
        let sa = g.softmax(a, 0).unwrap();
        assert_eq!(g.value(sa).data(), &[0.5, 0.5]);

        let b = g.constant(t1(&[1000.0, 1000.0]));
        let sb = g.softmax(b, 0).unwrap();
        assert!(g.value(sb).is_finite());
        assert_eq!(g.value(sb).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_matches_high_precision_oracle() {
        let mut rng = StdRng::seed_from_u64(11);
        let x: Vec<f32> = (0..10).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let mut g = Graph::new();
        let n = g.constant(Tensor::new(vec![10], x.clone()).unwrap());
        let s = g.softmax(n, 0).unwrap();
        let sum: f32 = g.value(s).data().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-6);

        // plain exp / sum oracle evaluated at f64
        let z: f64 = x.iter().map(|&v| (v as f64).exp()).sum();
        for (i, &got) in g.value(s).data().iter().enumerate() {
            let want = (x[i] as f64).exp() / z;
            assert!((got as f64 - want).abs() <= 1e-6);
        }
    }

    #[test]
    fn softmax_rank2_rows() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(vec![2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap());
        let s = g.softmax(a, 1).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn embedding_gathers_and_scatters() {
        let mut g = Graph::new();
        let table = g.leaf(Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let e = g.embed(table, &[0]).unwrap();
        assert_eq!(g.value(e).data(), &[1.0, 2.0]);

        // duplicated id: gradient row receives both contributions
        let e2 = g.embed(table, &[2, 2]).unwrap();
        let s = g.sum_all(e2);
        g.backward(s).unwrap();
        let grad = g.grad(table).unwrap();
        assert_eq!(grad.data(), &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn embedding_rejects_oov() {
        let mut g = Graph::<f64>::new();
        let table = g.leaf(Tensor::zeros(&[3, 2]));
        let err = g.embed(table, &[3]).unwrap_err();
        assert!(matches!(err, TensorError::OutOfVocab { id: 3, vocab: 3 }));
    }

    #[test]
    fn conv_window_sum_on_delta() {
        let mut g = Graph::new();
        let sig = g.constant(t1(&[0.0, 1.0, 0.0, 0.0]));
        let ker = g.constant(t1(&[1.0, 1.0, 1.0]));
        let out = g.conv1d_same(sig, ker).unwrap();
        assert_eq!(out_col(g.value(out), 0), vec![1.0, 1.0, 1.0, 0.0]);

        let zero = g.constant(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap());
        let out2 = g.conv1d_same(sig, zero).unwrap();
        assert!(g.value(out2).data().iter().all(|&v| v == 0.0));
    }

    fn out_col(t: &Tensor<f64>, c: usize) -> Vec<f64> {
        (0..t.rows()).map(|r| t.row(r)[c]).collect()
    }

    #[test]
    fn conv_rejects_even_kernel() {
        let mut g = Graph::<f64>::new();
        let sig = g.constant(Tensor::zeros(&[4]));
        let ker = g.constant(Tensor::zeros(&[2]));
        assert!(matches!(
            g.conv1d_same(sig, ker).unwrap_err(),
            TensorError::EvenKernel { width: 2 }
        ));
    }

    #[test]
    fn conv_matches_direct_sum_oracle() {
        let mut rng = StdRng::seed_from_u64(3);
        let t = 9;
        let f = 2;
        let k = 5;
        let sig: Vec<f64> = (0..t).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ker: Vec<f64> = (0..f * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let ns = g.constant(t1(&sig));
        let nk = g.constant(Tensor::new(vec![f, k], ker.clone()).unwrap());
        let out = g.conv1d_same(ns, nk).unwrap();
        let c = k / 2;
        for ti in 0..t {
            for fi in 0..f {
                let mut want = 0.0;
                for j in 0..k {
                    let src = ti as isize + j as isize - c as isize;
                    if src >= 0 && (src as usize) < t {
                        want += ker[fi * k + j] * sig[src as usize];
                    }
                }
                assert!((g.value(out).data()[ti * f + fi] - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut g = Graph::new();
        let x = g.leaf(t1(&[1.0, 2.0, 3.0]));
        let s = g.sum_all(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_product_rule() {
        let mut g = Graph::new();
        let x = g.leaf(t1(&[1.0, 2.0]));
        let y = g.leaf(t1(&[3.0, 4.0]));
        let p = g.mul(x, y).unwrap();
        let s = g.sum_all(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(g.grad(y).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let mut g = Graph::new();
        let x = g.leaf(t1(&[1.0, 1.0]));
        let s = g.sum_all(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
        g.zero_grads();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.leaf(t1(&[1.0, 2.0]));
        let err = g.backward(x).unwrap_err();
        assert!(matches!(err, TensorError::NonScalarLoss { .. }));
    }

    #[test]
    fn sigmoid_gradient_matches_finite_difference() {
        let mut rng = StdRng::seed_from_u64(5);
        let x0: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let f = |p: &[f64]| {
            let mut g = Graph::new();
            let x = g.leaf(t1(p));
            let s = g.sigmoid(x);
            let l = g.sum_all(s);
            g.value(l).item()
        };
        let mut g = Graph::new();
        let x = g.leaf(t1(&x0));
        let s = g.sigmoid(x);
        let l = g.sum_all(s);
        g.backward(l).unwrap();
        let analytic = g.grad(x).unwrap().data().to_vec();
        let mut params = x0.clone();
        let err = finite_diff_check(&mut params, &analytic, 1e-4, crate::tensor::FD_ATOL_F64, None, f);
        assert!(err <= 1e-6, "max rel err {err}");
    }

    // linearity: backward of a sum of outputs equals the sum of
    // separate backwards
    #[test]
    fn backward_is_linear_in_outputs() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..10 {
            let xv: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let build = |g: &mut Graph<f64>| {
                let x = g.leaf(t1(&xv));
                let s = g.sigmoid(x);
                let t = g.tanh(x);
                (x, g.sum_all(s), g.sum_all(t))
            };

            let mut g1 = Graph::new();
            let (x1, a1, b1) = build(&mut g1);
            let joint = g1.add(a1, b1).unwrap();
            g1.backward(joint).unwrap();
            let joint_grad = g1.grad(x1).unwrap().data().to_vec();

            let mut g2 = Graph::new();
            let (x2, a2, b2) = build(&mut g2);
            g2.backward(a2).unwrap();
            g2.backward(b2).unwrap();
            let summed = g2.grad(x2).unwrap().data().to_vec();

            for (a, b) in joint_grad.iter().zip(summed.iter()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn pair_concat_rows_pads_by_repeating_last() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let p = g.pair_concat_rows(a).unwrap();
        assert_eq!(g.value(p).shape(), &[2, 2]);
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 3.0]);
        let s = g.sum_all(p);
        g.backward(s).unwrap();
        // the repeated final row collects both halves of the last pair
        assert_eq!(g.grad(a).unwrap().data(), &[1.0, 1.0, 2.0]);
    }

    #[test]
    fn replay_is_deterministic() {
        let run = || {
            let mut rng = StdRng::seed_from_u64(99);
            let xv: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut g = Graph::new();
            let x = g.leaf(t1(&xv));
            let s = g.sigmoid(x);
            let sm = g.softmax(s, 0).unwrap();
            let l = g.sum_all(sm);
            g.backward(l).unwrap();
            (g.value(l).item(), g.grad(x).unwrap().data().to_vec())
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
