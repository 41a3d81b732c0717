//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive application in construction order,
//! which is a topological order. [`Graph::backward`] walks the record in
//! reverse and accumulates vector-Jacobian products into per-node buffers.
//!
//! ```
//! use wledial::numerics::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.param(Tensor::scalar(4.0));
//! let z = g.mul(x, y).unwrap();
//! let grads = g.backward(z).unwrap();
//! assert_eq!(grads.get(x).data(), &[4.0]);
//! assert_eq!(grads.get(y).data(), &[3.0]);
//! ```

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Concat { inputs: Vec<NodeId>, axis: usize },
    Slice { input: NodeId, axis: usize, start: usize },
    Transpose(NodeId),
    RowSelect { table: NodeId, index: usize },
    Sum(NodeId),
    Mean(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Pick { input: NodeId, index: usize },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The gradient tape.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every recorded node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `id`; nodes the root does not depend on get zeros.
    pub fn get(&self, id: NodeId) -> Tensor {
        let shape = self.shapes[id.0].clone();
        match &self.grads[id.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }

    /// Borrowed raw gradient, `None` when the node received no contribution.
    pub fn raw(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    /// Moves the gradient buffer out, leaving no contribution behind.
    pub fn take(&mut self, id: NodeId) -> Option<Vec<f64>> {
        self.grads[id.0].take()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; its `requires_grad` flag is taken from the tensor.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        let requires_grad = value.requires_grad();
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Records a leaf that gradients flow into.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value.with_requires_grad(true))
    }

    /// Records a leaf that is treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value.with_requires_grad(false))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, parents: &[NodeId]) -> NodeId {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(Tensor::from_parts(shape, data), op, requires_grad)
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2("matmul")?;
        let (k2, n) = bv.dims2("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", av, bv));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(av.data(), bv.data(), &mut out, m, k, n);
        Ok(self.push_op(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av, bv));
        }
        let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let shape = av.shape().to_vec();
        Ok(self.push_op(shape, out, op, &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a);
        let out = v.data().iter().map(|x| x * factor).collect();
        let shape = v.shape().to_vec();
        self.push_op(shape, out, Op::Scale(a, factor), &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let out = v.data().iter().map(|x| x.tanh()).collect();
        let shape = v.shape().to_vec();
        self.push_op(shape, out, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let out = v.data().iter().map(|&x| kernels::sigmoid(x)).collect();
        let shape = v.shape().to_vec();
        self.push_op(shape, out, Op::Sigmoid(a), &[a])
    }

    /// Concatenates 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = *inputs.first().ok_or(Error::Empty("concat"))?;
        if axis > 1 {
            return Err(Error::InvalidArgument(format!("concat: axis {axis} on 2-D tensors")));
        }
        let (r0, c0) = self.value(first).dims2("concat")?;
        let mut total = 0;
        for &id in inputs {
            let (r, c) = self.value(id).dims2("concat")?;
            let (keep, grow) = if axis == 0 { (c, r) } else { (r, c) };
            if keep != if axis == 0 { c0 } else { r0 } {
                return Err(shape_err("concat", self.value(first), self.value(id)));
            }
            total += grow;
        }
        let (rows, cols) = if axis == 0 { (total, c0) } else { (r0, total) };
        let mut out = Vec::with_capacity(rows * cols);
        if axis == 0 {
            for &id in inputs {
                out.extend_from_slice(self.value(id).data());
            }
        } else {
            for r in 0..rows {
                for &id in inputs {
                    let v = self.value(id);
                    let c = v.shape()[1];
                    out.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
                }
            }
        }
        let op = Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        };
        Ok(self.push_op(vec![rows, cols], out, op, inputs))
    }

    /// Contiguous slice of `len` rows (axis 0) or columns (axis 1).
    pub fn slice(&mut self, input: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(input);
        let (r, c) = v.dims2("slice")?;
        let extent = match axis {
            0 => r,
            1 => c,
            _ => return Err(Error::InvalidArgument(format!("slice: axis {axis} on 2-D tensors"))),
        };
        if len == 0 || start + len > extent {
            return Err(Error::IndexOutOfRange {
                op: "slice",
                index: start + len,
                len: extent,
            });
        }
        let (shape, out) = if axis == 0 {
            (vec![len, c], v.data()[start * c..(start + len) * c].to_vec())
        } else {
            let mut out = Vec::with_capacity(r * len);
            for row in 0..r {
                out.extend_from_slice(&v.data()[row * c + start..row * c + start + len]);
            }
            (vec![r, len], out)
        };
        Ok(self.push_op(shape, out, Op::Slice { input, axis, start }, &[input]))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        let (r, c) = v.dims2("transpose")?;
        let d = v.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        Ok(self.push_op(vec![c, r], out, Op::Transpose(a), &[a]))
    }

    /// Row `index` of a 2-D table, as a `[1, D]` row vector.
    pub fn row_select(&mut self, table: NodeId, index: usize) -> Result<NodeId> {
        let v = self.value(table);
        let (rows, cols) = v.dims2("row_select")?;
        if index >= rows {
            return Err(Error::IndexOutOfRange {
                op: "row_select",
                index,
                len: rows,
            });
        }
        let out = v.data()[index * cols..(index + 1) * cols].to_vec();
        Ok(self.push_op(vec![1, cols], out, Op::RowSelect { table, index }, &[table]))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total = self.value(a).data().iter().sum();
        self.push_op(vec![1, 1], vec![total], Op::Sum(a), &[a])
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let total: f64 = v.data().iter().sum();
        let mean = total / v.len() as f64;
        self.push_op(vec![1, 1], vec![mean], Op::Mean(a), &[a])
    }

    /// Softmax over all elements of a vector-shaped tensor.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let out = kernels::softmax(v.data());
        let shape = v.shape().to_vec();
        self.push_op(shape, out, Op::Softmax(a), &[a])
    }

    /// Log-softmax over all elements of a vector-shaped tensor.
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let out = kernels::log_softmax(v.data());
        let shape = v.shape().to_vec();
        self.push_op(shape, out, Op::LogSoftmax(a), &[a])
    }

    /// Flat element `index`, as a scalar.
    pub fn pick(&mut self, input: NodeId, index: usize) -> Result<NodeId> {
        let v = self.value(input);
        let x = *v.data().get(index).ok_or(Error::IndexOutOfRange {
            op: "pick",
            index,
            len: v.len(),
        })?;
        Ok(self.push_op(vec![1, 1], vec![x], Op::Pick { input, index }, &[input]))
    }

    /// Sum of many same-shaped nodes, accumulated left to right.
    pub fn add_all(&mut self, items: &[NodeId]) -> Result<NodeId> {
        let (&first, rest) = items.split_first().ok_or(Error::Empty("add_all"))?;
        let mut acc = first;
        for &x in rest {
            acc = self.add(acc, x)?;
        }
        Ok(acc)
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::NotScalar(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }

        grads.resize(self.nodes.len(), None);
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.requires_grad(*a) {
                    let ga = self.slot(grads, *a);
                    kernels::matmul_nt_acc(up, bv.data(), ga, m, n, k);
                }
                if self.requires_grad(*b) {
                    // Summed apart, then added once, so contributions from
                    // other consumers of `b` stay separate terms.
                    let mut part = vec![0.0; k * n];
                    kernels::matmul_tn_acc(av.data(), up, &mut part, m, k, n);
                    kernels::add_assign(self.slot(grads, *b), &part);
                }
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if self.requires_grad(id) {
                        kernels::add_assign(self.slot(grads, id), up);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.requires_grad(*a) {
                    kernels::add_assign(self.slot(grads, *a), up);
                }
                if self.requires_grad(*b) {
                    for (g, u) in self.slot(grads, *b).iter_mut().zip(up) {
                        *g -= u;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).clone(), self.value(*b).clone());
                if self.requires_grad(*a) {
                    let ga = self.slot(grads, *a);
                    for ((g, u), y) in ga.iter_mut().zip(up).zip(bv.data()) {
                        *g += u * y;
                    }
                }
                if self.requires_grad(*b) {
                    let gb = self.slot(grads, *b);
                    for ((g, u), x) in gb.iter_mut().zip(up).zip(av.data()) {
                        *g += u * x;
                    }
                }
            }
            Op::Scale(a, factor) => {
                for (g, u) in self.slot(grads, *a).iter_mut().zip(up) {
                    *g += u * factor;
                }
            }
            Op::Tanh(a) => {
                for ((g, u), y) in self.slot(grads, *a).iter_mut().zip(up).zip(out) {
                    *g += u * (1.0 - y * y);
                }
            }
            Op::Sigmoid(a) => {
                for ((g, u), y) in self.slot(grads, *a).iter_mut().zip(up).zip(out) {
                    *g += u * y * (1.0 - y);
                }
            }
            Op::Concat { inputs, axis } => {
                let cols = node.value.shape()[1];
                let mut offset = 0;
                for &id in inputs {
                    let shape = self.value(id).shape();
                    let (r, c) = (shape[0], shape[1]);
                    if self.requires_grad(id) {
                        let g = self.slot(grads, id);
                        if *axis == 0 {
                            kernels::add_assign(g, &up[offset * cols..(offset + r) * cols]);
                        } else {
                            for row in 0..r {
                                let src = &up[row * cols + offset..row * cols + offset + c];
                                kernels::add_assign(&mut g[row * c..(row + 1) * c], src);
                            }
                        }
                    }
                    offset += if *axis == 0 { r } else { c };
                }
            }
            Op::Slice { input, axis, start } => {
                let in_cols = self.value(*input).shape()[1];
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                let g = self.slot(grads, *input);
                if *axis == 0 {
                    kernels::add_assign(&mut g[start * in_cols..(start + r) * in_cols], up);
                } else {
                    for row in 0..r {
                        let dst = &mut g[row * in_cols + start..row * in_cols + start + c];
                        kernels::add_assign(dst, &up[row * c..(row + 1) * c]);
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                let g = self.slot(grads, *a);
                for i in 0..r {
                    for j in 0..c {
                        g[j * r + i] += up[i * c + j];
                    }
                }
            }
            Op::RowSelect { table, index } => {
                let cols = node.value.shape()[1];
                let g = self.slot(grads, *table);
                kernels::add_assign(&mut g[index * cols..(index + 1) * cols], up);
            }
            Op::Sum(a) => {
                let u = up[0];
                for g in self.slot(grads, *a).iter_mut() {
                    *g += u;
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let u = up[0] / n;
                for g in self.slot(grads, *a).iter_mut() {
                    *g += u;
                }
            }
            Op::Softmax(a) => {
                let dot: f64 = up.iter().zip(out).map(|(u, y)| u * y).sum();
                for ((g, u), y) in self.slot(grads, *a).iter_mut().zip(up).zip(out) {
                    *g += y * (u - dot);
                }
            }
            Op::LogSoftmax(a) => {
                let total: f64 = up.iter().sum();
                for ((g, u), y) in self.slot(grads, *a).iter_mut().zip(up).zip(out) {
                    *g += u - y.exp() * total;
                }
            }
            Op::Pick { input, index } => {
                self.slot(grads, *input)[*index] += up[0];
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], id: NodeId) -> &'g mut [f64] {
        let len = self.nodes[id.0].value.len();
        grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }
}
