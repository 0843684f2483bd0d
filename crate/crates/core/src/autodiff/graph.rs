//! Tape of tensor operations with a reverse sweep.
//!
//! Nodes are appended in creation order and may only reference earlier
//! nodes, so the tape is acyclic by construction and the backward pass is a
//! single reverse scan. Parameter values are borrowed from the store; a
//! graph never mutates them.

use std::collections::{BTreeSet, HashMap};

use super::{ParamId, ParamKind, ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param(ParamId),
    Lookup {
        param: ParamId,
        row: usize,
    },
    MatVec {
        w: NodeId,
        x: NodeId,
        col_offset: usize,
    },
    Add(NodeId, NodeId),
    AddN(Vec<NodeId>),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    AddConst(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Concat(Vec<NodeId>),
    Slice {
        x: NodeId,
        start: usize,
    },
    Dot(NodeId, NodeId),
    Sum(NodeId),
    Pick {
        x: NodeId,
        index: usize,
    },
    LogSumExp(Vec<NodeId>),
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    // None for parameter nodes, whose value lives in the store.
    value: Option<Tensor<T>>,
}

/// Parameter gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    touched_rows: Vec<BTreeSet<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn empty(num_params: usize) -> Self {
        Self {
            grads: vec![None; num_params],
            touched_rows: vec![BTreeSet::new(); num_params],
        }
    }

    /// Gradient of a reached parameter, `None` when unreachable.
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads[id.index()].as_ref()
    }

    /// Gradient of a parameter, zero-filled when unreachable.
    pub fn get_or_zero(&self, id: ParamId, store: &ParameterStore<T>) -> Tensor<T> {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()))
    }

    /// Rows of a lookup table that received gradient.
    pub fn touched_rows(&self, id: ParamId) -> &BTreeSet<usize> {
        &self.touched_rows[id.index()]
    }

    pub fn num_params(&self) -> usize {
        self.grads.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.grads.iter_mut().flatten()
    }

    pub fn global_norm(&self) -> T {
        self.iter()
            .fold(T::zero(), |acc, (_, g)| acc + g.sum_of_squares())
            .sqrt()
    }

    /// Adds `other` into `self`, merging touched rows.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                match &mut self.grads[i] {
                    Some(mine) => mine.add_assign(g),
                    slot @ None => *slot = Some(g.clone()),
                }
                self.touched_rows[i].extend(other.touched_rows[i].iter().copied());
            }
        }
    }
}

/// A computation graph over borrowed parameters.
pub struct Graph<'p, T> {
    params: &'p ParameterStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParameterStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParameterStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.params.value(*p),
            _ => unreachable!("node without value"),
        }
    }

    /// Value of a one-element node.
    pub fn scalar(&self, id: NodeId) -> T {
        self.value(id).item()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        id
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.value(id).shape()
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// Constant input; receives no gradient outside the graph.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn constant_scalar(&mut self, value: T) -> NodeId {
        self.input(Tensor::scalar(value))
    }

    /// The whole parameter tensor as a node. Repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let n = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        self.param_nodes.insert(id, n);
        n
    }

    /// One row of an embedding table.
    pub fn lookup(&mut self, param: ParamId, row: usize) -> Result<NodeId> {
        let table = self.params.value(param);
        if row >= table.rows() {
            return Err(Error::invalid(format!(
                "lookup row {row} out of range for `{}` with {} rows",
                self.params.get(param).name,
                table.rows()
            )));
        }
        let value = Tensor::vector(table.row(row).to_vec());
        Ok(self.push(Op::Lookup { param, row }, value))
    }

    /// `W x` for a matrix node `W`.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (ws, xs) = (self.shape(w), self.shape(x));
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(Error::Shape {
                op: "matvec",
                left: ws.to_vec(),
                right: xs.to_vec(),
            });
        }
        self.matvec_cols(w, x, 0)
    }

    /// `W[:, offset..offset + len(x)] x`: product with a block of columns.
    pub fn matvec_cols(&mut self, w: NodeId, x: NodeId, col_offset: usize) -> Result<NodeId> {
        let (ws, xs) = (self.shape(w), self.shape(x));
        if ws.len() != 2 || xs.len() != 1 || col_offset + xs[0] > ws[1] {
            return Err(Error::Shape {
                op: "matvec_cols",
                left: ws.to_vec(),
                right: xs.to_vec(),
            });
        }
        let wv = self.value(w);
        let xv = self.value(x).data();
        let (rows, cols) = (ws[0], ws[1]);
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &wv.data()[r * cols + col_offset..r * cols + col_offset + xv.len()];
            out.push(dot(row, xv));
        }
        Ok(self.push(Op::MatVec { w, x, col_offset }, Tensor::vector(out)))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<NodeId> {
        self.same_shape(name, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(op, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    /// Elementwise sum of same-shaped nodes, accumulated left to right.
    pub fn add_n(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::invalid("add_n of empty list"))?;
        let mut acc = self.value(first).clone();
        for &x in &xs[1..] {
            self.same_shape("add_n", first, x)?;
            acc.add_assign(self.value(x));
        }
        Ok(self.push(Op::AddN(xs.to_vec()), acc))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: T) -> NodeId {
        let mut v = self.value(a).clone();
        v.scale_assign(factor);
        self.push(Op::Scale(a, factor), v)
    }

    /// Adds a constant to every element.
    pub fn add_const(&mut self, a: NodeId, c: T) -> NodeId {
        let mut v = self.value(a).clone();
        v.data_mut().iter_mut().for_each(|x| *x += c);
        self.push(Op::AddConst(a), v)
    }

    fn map(&mut self, a: NodeId, f: impl Fn(T) -> T, op: Op<T>) -> NodeId {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(op, value)
    }

    /// Rectified linear unit; the subgradient at zero is zero.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map(
            a,
            |x| if x > T::zero() { x } else { T::zero() },
            Op::Relu(a),
        )
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, |x| x.tanh(), Op::Tanh(a))
    }

    /// Concatenation of rank-1 nodes.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::invalid("concat of empty list"));
        }
        let mut data = Vec::new();
        for &x in xs {
            let s = self.shape(x);
            if s.len() != 1 {
                return Err(Error::Shape {
                    op: "concat",
                    left: s.to_vec(),
                    right: vec![],
                });
            }
            data.extend_from_slice(self.value(x).data());
        }
        Ok(self.push(Op::Concat(xs.to_vec()), Tensor::vector(data)))
    }

    /// Elements `start..start + len` of a rank-1 node.
    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != 1 || len == 0 || start + len > s[0] {
            return Err(Error::Shape {
                op: "slice",
                left: s.to_vec(),
                right: vec![start, len],
            });
        }
        let data = self.value(x).data()[start..start + len].to_vec();
        Ok(self.push(Op::Slice { x, start }, Tensor::vector(data)))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("dot", a, b)?;
        let v = dot(self.value(a).data(), self.value(b).data());
        Ok(self.push(Op::Dot(a, b), Tensor::scalar(v)))
    }

    /// Sum of all elements.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).data().iter().fold(T::zero(), |s, &x| s + x);
        self.push(Op::Sum(a), Tensor::scalar(v))
    }

    /// One element as a scalar node.
    pub fn pick(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let len = self.value(x).len();
        if index >= len {
            return Err(Error::Shape {
                op: "pick",
                left: self.shape(x).to_vec(),
                right: vec![index],
            });
        }
        let v = self.value(x).data()[index];
        Ok(self.push(Op::Pick { x, index }, Tensor::scalar(v)))
    }

    /// `log Σ exp(x_k)` over scalar nodes.
    pub fn log_sum_exp(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::invalid("log_sum_exp of empty list"));
        }
        let mut vals = Vec::with_capacity(xs.len());
        for &x in xs {
            let v = self.value(x);
            if !v.is_scalar() {
                return Err(Error::Shape {
                    op: "log_sum_exp",
                    left: v.shape().to_vec(),
                    right: vec![1],
                });
            }
            vals.push(v.item());
        }
        let v = log_sum_exp(&vals);
        Ok(self.push(Op::LogSumExp(xs.to_vec()), Tensor::scalar(v)))
    }

    /// Reverse sweep from a scalar loss node.
    ///
    /// Every parameter reachable from `loss` gets a gradient entry; all
    /// others stay `None` and read as zero.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NotScalar(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(loss_value.shape()));
        let mut out = Gradients::empty(self.params.len());

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    if self.params.get(*p).trainable {
                        accumulate_param(&mut out, *p, &gy);
                        if self.params.get(*p).kind == ParamKind::Lookup {
                            let rows = self.params.value(*p).rows();
                            out.touched_rows[p.index()].extend(0..rows);
                        }
                    }
                }
                Op::Lookup { param, row } => {
                    let p = self.params.get(*param);
                    if p.trainable {
                        let g = out.grads[param.index()]
                            .get_or_insert_with(|| Tensor::zeros(p.value.shape()));
                        for (a, &b) in g.row_mut(*row).iter_mut().zip(gy.data()) {
                            *a += b;
                        }
                        out.touched_rows[param.index()].insert(*row);
                    }
                }
                Op::MatVec { w, x, col_offset } => {
                    let wv = self.value(*w);
                    let xv = self.value(*x).data();
                    let cols = wv.cols();
                    let g = gy.data();
                    let gw = grad_slot(&mut grads, *w, wv.shape());
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == T::zero() {
                            continue;
                        }
                        let row = &mut gw.data_mut()[r * cols + col_offset..][..xv.len()];
                        for (a, &b) in row.iter_mut().zip(xv) {
                            *a += gr * b;
                        }
                    }
                    let xshape = self.shape(*x).to_vec();
                    let wdata = self.value(*w).data();
                    let gx = grad_slot(&mut grads, *x, &xshape);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == T::zero() {
                            continue;
                        }
                        let row = &wdata[r * cols + col_offset..][..xshape[0]];
                        for (a, &b) in gx.data_mut().iter_mut().zip(row) {
                            *a += gr * b;
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(&mut grads, *a, &gy);
                    add_into(&mut grads, *b, &gy);
                }
                Op::AddN(xs) => {
                    for &x in xs {
                        add_into(&mut grads, x, &gy);
                    }
                }
                Op::Sub(a, b) => {
                    add_into(&mut grads, *a, &gy);
                    let mut neg = gy.clone();
                    neg.scale_assign(-T::one());
                    add_into(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = elementwise(&gy, bv, |g, y| g * y);
                    let gb = elementwise(&gy, av, |g, x| g * x);
                    add_into(&mut grads, *a, &ga);
                    add_into(&mut grads, *b, &gb);
                }
                Op::Scale(a, factor) => {
                    let mut g = gy.clone();
                    g.scale_assign(*factor);
                    add_into(&mut grads, *a, &g);
                }
                Op::AddConst(a) => add_into(&mut grads, *a, &gy),
                Op::Relu(a) => {
                    let g = elementwise(&gy, self.value(*a), |g, x| {
                        if x > T::zero() {
                            g
                        } else {
                            T::zero()
                        }
                    });
                    add_into(&mut grads, *a, &g);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    let g = elementwise(&gy, y, |g, s| g * s * (T::one() - s));
                    add_into(&mut grads, *a, &g);
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    let g = elementwise(&gy, y, |g, t| g * (T::one() - t * t));
                    add_into(&mut grads, *a, &g);
                }
                Op::Concat(xs) => {
                    let mut offset = 0;
                    for &x in xs {
                        let len = self.value(x).len();
                        let part = Tensor::vector(gy.data()[offset..offset + len].to_vec());
                        add_into(&mut grads, x, &part);
                        offset += len;
                    }
                }
                Op::Slice { x, start } => {
                    let shape = self.shape(*x).to_vec();
                    let gx = grad_slot(&mut grads, *x, &shape);
                    for (a, &b) in gx.data_mut()[*start..].iter_mut().zip(gy.data()) {
                        *a += b;
                    }
                }
                Op::Dot(a, b) => {
                    let g = gy.item();
                    let ga = elementwise(self.value(*b), self.value(*b), |y, _| g * y);
                    let gb = elementwise(self.value(*a), self.value(*a), |x, _| g * x);
                    add_into(&mut grads, *a, &ga);
                    add_into(&mut grads, *b, &gb);
                }
                Op::Sum(a) => {
                    let shape = self.shape(*a).to_vec();
                    add_into(&mut grads, *a, &Tensor::filled(&shape, gy.item()));
                }
                Op::Pick { x, index } => {
                    let shape = self.shape(*x).to_vec();
                    let gx = grad_slot(&mut grads, *x, &shape);
                    gx.data_mut()[*index] += gy.item();
                }
                Op::LogSumExp(xs) => {
                    let total = node.value.as_ref().unwrap().item();
                    let g = gy.item();
                    for &x in xs {
                        let w = (self.value(x).item() - total).exp();
                        add_into(&mut grads, x, &Tensor::scalar(g * w));
                    }
                }
            }
        }
        Ok(out)
    }
}

fn accumulate_param<T: Scalar>(out: &mut Gradients<T>, p: ParamId, g: &Tensor<T>) {
    match &mut out.grads[p.index()] {
        Some(acc) => acc.add_assign(g),
        slot @ None => *slot = Some(g.clone()),
    }
}

fn grad_slot<'a, T: Scalar>(
    grads: &'a mut [Option<Tensor<T>>],
    id: NodeId,
    shape: &[usize],
) -> &'a mut Tensor<T> {
    grads[id.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn add_into<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: &Tensor<T>) {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(g),
        slot @ None => *slot = Some(g.clone()),
    }
}

fn elementwise<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable `log Σ exp(x_k)`.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let s = xs.iter().fold(T::zero(), |acc, &x| acc + (x - max).exp());
    max + s.ln()
}
