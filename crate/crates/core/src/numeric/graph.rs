//! Tape-style reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive as it is evaluated. Nodes are appended
//! in evaluation order, so the node list is already topologically sorted and
//! the backward pass is a single reverse sweep. Graphs are cheap, single-use
//! values: build one per forward pass and drop it after `backward`.

use crate::error::{Error, Result};

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Minimum(NodeId, NodeId),
    Scale(NodeId, f64),
    Concat(Vec<NodeId>),
    Slice { src: NodeId, start: usize },
    Pick { src: NodeId, index: usize },
    Relu(NodeId),
    Tanh(NodeId),
    Logistic(NodeId),
    Exp(NodeId),
    Clamp { src: NodeId, lo: f64, hi: f64 },
    RowSoftmax(NodeId),
    RowLogSoftmax(NodeId),
    Nll { logp: NodeId, target: usize },
    Sum(NodeId),
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct Node {
    op: Op,
    value: Value,
    requires_grad: bool,
}

pub struct Graph<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

impl Default for Graph<'static> {
    fn default() -> Self {
        Graph {
            store: None,
            nodes: Vec::new(),
            param_nodes: Vec::new(),
        }
    }
}

impl<'p> Graph<'p> {
    /// A graph with parameters drawn from `store`.
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store: Some(store),
            nodes: Vec::with_capacity(256),
            param_nodes: vec![None; store.len()],
        }
    }

    /// A graph with no parameter store; only constants can be leaves.
    pub fn detached() -> Graph<'static> {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match &self.nodes[id.0].value {
            Value::Owned(t) => t,
            Value::Param(p) => self.store.expect("param node without store").get(*p),
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.value(id).shape()
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push_raw(Op::Constant, Value::Owned(t), false)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node
    /// so gradients accumulate on a single leaf.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        let store = self.store.expect("graph has no parameter store");
        assert!(id.0 < store.len(), "parameter id out of range");
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        let n = self.push_raw(Op::Param(id), Value::Param(id), true);
        self.param_nodes[id.0] = Some(n);
        n
    }

    fn push_raw(&mut self, op: Op, value: Value, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(
        &mut self,
        op: Op,
        name: &'static str,
        out: Tensor,
        inputs: &[NodeId],
    ) -> Result<NodeId> {
        if !out.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        Ok(self.push_raw(op, Value::Owned(out), requires_grad))
    }

    fn shape_err(&self, op: &'static str, ids: &[NodeId]) -> Error {
        Error::Shape {
            op,
            shapes: ids.iter().map(|&i| self.shape(i).to_vec()).collect(),
        }
    }

    /// `a [m,k] x b [k]` gives `[m]`; `a [m,k] x b [k,n]` gives `[m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || av.shape()[1] != bv.shape()[0] || bv.shape().len() > 2 {
            return Err(self.shape_err("matmul", &[a, b]));
        }
        let (m, k) = (av.shape()[0], av.shape()[1]);
        let out = if bv.shape().len() == 1 {
            let x = bv.data();
            let data = av.data().chunks_exact(k).map(|row| dot(row, x)).collect();
            Tensor::new(vec![m], data)?
        } else {
            let n = bv.shape()[1];
            let mut data = vec![0.0; m * n];
            for i in 0..m {
                let out_row = &mut data[i * n..(i + 1) * n];
                for (p, &aip) in av.row(i).iter().enumerate() {
                    if aip != 0.0 {
                        axpy(aip, bv.row(p), out_row);
                    }
                }
            }
            Tensor::new(vec![m, n], data)?
        };
        self.push(Op::MatMul(a, b), "matmul", out, &[a, b])
    }

    fn zip_same(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(self.shape_err(name, &[a, b]));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        self.push(Op::Add(a, b), "add", out, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        self.push(Op::Sub(a, b), "sub", out, &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        self.push(Op::Mul(a, b), "mul", out, &[a, b])
    }

    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.zip_same(a, b, "minimum", |x, y| if y < x { y } else { x })?;
        self.push(Op::Minimum(a, b), "minimum", out, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let out = self.map(a, |x| x * c)?;
        self.push(Op::Scale(a, c), "scale", out, &[a])
    }

    fn map(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let av = self.value(a);
        Tensor::new(
            av.shape().to_vec(),
            av.data().iter().map(|&x| f(x)).collect(),
        )
    }

    /// Concatenate 1-D tensors.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() || parts.iter().any(|&p| self.shape(p).len() != 1) {
            return Err(self.shape_err("concat", parts));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|&p| self.value(p).len()).sum());
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::vector(data);
        self.push(Op::Concat(parts.to_vec()), "concat", out, parts)
    }

    /// Contiguous sub-range `[start, start + len)` of a 1-D tensor.
    pub fn slice(&mut self, src: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(src);
        if v.shape().len() != 1 || len == 0 || start + len > v.len() {
            return Err(Error::Shape {
                op: "slice",
                shapes: vec![v.shape().to_vec(), vec![start, len]],
            });
        }
        let out = Tensor::vector(v.data()[start..start + len].to_vec());
        self.push(Op::Slice { src, start }, "slice", out, &[src])
    }

    /// Scalar element `index` of a tensor (flat indexing).
    pub fn pick(&mut self, src: NodeId, index: usize) -> Result<NodeId> {
        let v = self.value(src);
        if index >= v.len() {
            return Err(Error::Shape {
                op: "pick",
                shapes: vec![v.shape().to_vec(), vec![index]],
            });
        }
        let out = Tensor::scalar(v.data()[index]);
        self.push(Op::Pick { src, index }, "pick", out, &[src])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.map(a, |x| if x > 0.0 { x } else { 0.0 })?;
        self.push(Op::Relu(a), "relu", out, &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.map(a, f64::tanh)?;
        self.push(Op::Tanh(a), "tanh", out, &[a])
    }

    pub fn logistic(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.map(a, logistic)?;
        self.push(Op::Logistic(a), "logistic", out, &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.map(a, f64::exp)?;
        self.push(Op::Exp(a), "exp", out, &[a])
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if lo > hi {
            return Err(Error::InvalidArgument(format!("clamp bounds {lo} > {hi}")));
        }
        let out = self.map(a, |x| x.clamp(lo, hi))?;
        self.push(Op::Clamp { src: a, lo, hi }, "clamp", out, &[a])
    }

    /// Softmax over the last axis (each row of a matrix, or the whole vector).
    pub fn row_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        let c = row_width(v);
        let mut data = Vec::with_capacity(v.len());
        for row in v.data().chunks_exact(c) {
            data.extend(super::tensor::softmax(row));
        }
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push(Op::RowSoftmax(a), "row_softmax", out, &[a])
    }

    pub fn row_log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        let c = row_width(v);
        let mut data = Vec::with_capacity(v.len());
        for row in v.data().chunks_exact(c) {
            data.extend(super::tensor::log_softmax(row));
        }
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push(Op::RowLogSoftmax(a), "row_log_softmax", out, &[a])
    }

    /// Negative log-likelihood `-logp[target]` of a 1-D log-probability vector.
    pub fn nll(&mut self, logp: NodeId, target: usize) -> Result<NodeId> {
        let v = self.value(logp);
        if v.shape().len() != 1 || target >= v.len() {
            return Err(Error::Shape {
                op: "nll",
                shapes: vec![v.shape().to_vec(), vec![target]],
            });
        }
        let out = Tensor::scalar(-v.data()[target]);
        self.push(Op::Nll { logp, target }, "nll", out, &[logp])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(Op::Sum(a), "sum", out, &[a])
    }

    /// Sum of several scalar (or equal-shape) nodes.
    pub fn add_all(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("add_all of nothing".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// parameter leaf reachable from `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Grads> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let n_params = self.store.map_or(0, ParamStore::len);
        let mut result = Grads::empty(n_params);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => {
                    let shape = self.store.unwrap().get(*p).shape().to_vec();
                    result.set(*p, Tensor::new(shape, g)?);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let k = av.shape()[1];
                    if bv.shape().len() == 1 {
                        let x = bv.data();
                        if self.wants(*a) {
                            let ga = slot(&mut grads, *a, av.len());
                            for (i, &gi) in g.iter().enumerate() {
                                if gi != 0.0 {
                                    axpy(gi, x, &mut ga[i * k..(i + 1) * k]);
                                }
                            }
                        }
                        if self.wants(*b) {
                            let gb = slot(&mut grads, *b, bv.len());
                            for (i, &gi) in g.iter().enumerate() {
                                if gi != 0.0 {
                                    axpy(gi, av.row(i), gb);
                                }
                            }
                        }
                    } else {
                        let n = bv.shape()[1];
                        let m = av.shape()[0];
                        if self.wants(*a) {
                            let ga = slot(&mut grads, *a, av.len());
                            for i in 0..m {
                                let gi = &g[i * n..(i + 1) * n];
                                for p in 0..k {
                                    ga[i * k + p] += dot(gi, bv.row(p));
                                }
                            }
                        }
                        if self.wants(*b) {
                            let gb = slot(&mut grads, *b, bv.len());
                            for i in 0..m {
                                let gi = &g[i * n..(i + 1) * n];
                                for (p, &aip) in av.row(i).iter().enumerate() {
                                    if aip != 0.0 {
                                        axpy(aip, gi, &mut gb[p * n..(p + 1) * n]);
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, &g, |_, g| g);
                    self.acc(&mut grads, *b, &g, |_, g| g);
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, &g, |_, g| g);
                    self.acc(&mut grads, *b, &g, |_, g| -g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    self.acc(&mut grads, *a, &g, |i, g| g * bv[i]);
                    self.acc(&mut grads, *b, &g, |i, g| g * av[i]);
                }
                Op::Minimum(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    self.acc(
                        &mut grads,
                        *a,
                        &g,
                        |i, g| if bv[i] < av[i] { 0.0 } else { g },
                    );
                    self.acc(
                        &mut grads,
                        *b,
                        &g,
                        |i, g| if bv[i] < av[i] { g } else { 0.0 },
                    );
                }
                Op::Scale(a, c) => self.acc(&mut grads, *a, &g, |_, g| g * c),
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        if self.wants(p) {
                            let gp = slot(&mut grads, p, len);
                            gp.iter_mut()
                                .zip(&g[offset..offset + len])
                                .for_each(|(a, b)| *a += b);
                        }
                        offset += len;
                    }
                }
                Op::Slice { src, start } => {
                    if self.wants(*src) {
                        let len = self.value(*src).len();
                        let gs = slot(&mut grads, *src, len);
                        gs[*start..*start + g.len()]
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(a, b)| *a += b);
                    }
                }
                Op::Pick { src, index } => {
                    if self.wants(*src) {
                        let len = self.value(*src).len();
                        slot(&mut grads, *src, len)[*index] += g[0];
                    }
                }
                Op::Relu(a) => {
                    let av = self.value(*a).data();
                    self.acc(&mut grads, *a, &g, |i, g| if av[i] > 0.0 { g } else { 0.0 });
                }
                Op::Tanh(a) => {
                    let out = self.value(NodeId(idx)).data();
                    self.acc(&mut grads, *a, &g, |i, g| g * (1.0 - out[i] * out[i]));
                }
                Op::Logistic(a) => {
                    let out = self.value(NodeId(idx)).data();
                    self.acc(&mut grads, *a, &g, |i, g| g * out[i] * (1.0 - out[i]));
                }
                Op::Exp(a) => {
                    let out = self.value(NodeId(idx)).data();
                    self.acc(&mut grads, *a, &g, |i, g| g * out[i]);
                }
                Op::Clamp { src, lo, hi } => {
                    let sv = self.value(*src).data();
                    self.acc(&mut grads, *src, &g, |i, g| {
                        if sv[i] >= *lo && sv[i] <= *hi {
                            g
                        } else {
                            0.0
                        }
                    });
                }
                Op::RowSoftmax(a) => {
                    let out = self.value(NodeId(idx));
                    let c = row_width(out);
                    let mut dz = vec![0.0; g.len()];
                    for ((p, gr), d) in out
                        .data()
                        .chunks_exact(c)
                        .zip(g.chunks_exact(c))
                        .zip(dz.chunks_exact_mut(c))
                    {
                        let s = dot(p, gr);
                        for j in 0..c {
                            d[j] = p[j] * (gr[j] - s);
                        }
                    }
                    self.acc(&mut grads, *a, &dz, |_, g| g);
                }
                Op::RowLogSoftmax(a) => {
                    let out = self.value(NodeId(idx));
                    let c = row_width(out);
                    let mut dz = vec![0.0; g.len()];
                    for ((lp, gr), d) in out
                        .data()
                        .chunks_exact(c)
                        .zip(g.chunks_exact(c))
                        .zip(dz.chunks_exact_mut(c))
                    {
                        let s: f64 = gr.iter().sum();
                        for j in 0..c {
                            d[j] = gr[j] - lp[j].exp() * s;
                        }
                    }
                    self.acc(&mut grads, *a, &dz, |_, g| g);
                }
                Op::Nll { logp, target } => {
                    if self.wants(*logp) {
                        let len = self.value(*logp).len();
                        slot(&mut grads, *logp, len)[*target] -= g[0];
                    }
                }
                Op::Sum(a) => {
                    let g0 = g[0];
                    let len = self.value(*a).len();
                    if self.wants(*a) {
                        slot(&mut grads, *a, len).iter_mut().for_each(|x| *x += g0);
                    }
                }
            }
        }
        if !result.all_finite() {
            return Err(Error::NonFinite { op: "backward" });
        }
        Ok(result)
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn acc(
        &self,
        grads: &mut [Option<Vec<f64>>],
        target: NodeId,
        g: &[f64],
        f: impl Fn(usize, f64) -> f64,
    ) {
        if !self.wants(target) {
            return;
        }
        let dst = slot(grads, target, g.len());
        for (i, (d, &gi)) in dst.iter_mut().zip(g).enumerate() {
            *d += f(i, gi);
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut [f64] {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn row_width(t: &Tensor) -> usize {
    *t.shape().last().unwrap()
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent accumulators let the compiler vectorize
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
