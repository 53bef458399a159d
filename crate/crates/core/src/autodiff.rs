//! Arena-backed reverse-mode automatic differentiation.
//!
//! Every node lives in a [`Graph`] and is addressed by a copyable [`Var`].
//! Node indices are a topological order, so backward is a single reverse
//! sweep. Each vector-Jacobian rule is written with graph operations, which
//! means the gradients produced in graph-building mode are ordinary nodes
//! and can be differentiated again.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{kernels, ConvGeometry, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Primitive operation kinds. Composite layers are built from these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Neg,
    Affine,
    Exp,
    Tanh,
    Sigmoid,
    Powf,
    LeakyRelu,
    MatMul,
    Transpose,
    Reshape,
    BroadcastTo,
    SumTo,
    Im2col,
    Col2im,
    BmmLeft,
    BmmSumNt,
    Upsample2x,
    PoolSum2x,
    LogSoftmax,
    Select,
    Embed,
}

impl OpKind {
    pub const ALL: [OpKind; 25] = [
        OpKind::Leaf,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Neg,
        OpKind::Affine,
        OpKind::Exp,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::Powf,
        OpKind::LeakyRelu,
        OpKind::MatMul,
        OpKind::Transpose,
        OpKind::Reshape,
        OpKind::BroadcastTo,
        OpKind::SumTo,
        OpKind::Im2col,
        OpKind::Col2im,
        OpKind::BmmLeft,
        OpKind::BmmSumNt,
        OpKind::Upsample2x,
        OpKind::PoolSum2x,
        OpKind::LogSoftmax,
        OpKind::Select,
        OpKind::Embed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Neg => "neg",
            OpKind::Affine => "affine",
            OpKind::Exp => "exp",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Powf => "powf",
            OpKind::LeakyRelu => "leaky_relu",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Reshape => "reshape",
            OpKind::BroadcastTo => "broadcast_to",
            OpKind::SumTo => "sum_to",
            OpKind::Im2col => "im2col",
            OpKind::Col2im => "col2im",
            OpKind::BmmLeft => "bmm_left",
            OpKind::BmmSumNt => "bmm_sum_nt",
            OpKind::Upsample2x => "upsample2x",
            OpKind::PoolSum2x => "pool_sum2x",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::Select => "select",
            OpKind::Embed => "embed",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.iter().copied().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    // only the scale matters for the derivative
    Affine(Var, T),
    Exp(Var),
    Tanh(Var),
    Sigmoid(Var),
    Powf(Var, T),
    LeakyRelu(Var, T),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    BroadcastTo(Var),
    SumTo(Var),
    Im2col(Var, ConvGeometry),
    Col2im(Var, ConvGeometry),
    BmmLeft(Var, Var),
    BmmSumNt(Var, Var),
    Upsample2x(Var),
    PoolSum2x(Var),
    LogSoftmax(Var),
    Select(Var, usize),
    Embed(Var, usize),
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Neg(..) => OpKind::Neg,
            Op::Affine(..) => OpKind::Affine,
            Op::Exp(..) => OpKind::Exp,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Powf(..) => OpKind::Powf,
            Op::LeakyRelu(..) => OpKind::LeakyRelu,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Reshape(..) => OpKind::Reshape,
            Op::BroadcastTo(..) => OpKind::BroadcastTo,
            Op::SumTo(..) => OpKind::SumTo,
            Op::Im2col(..) => OpKind::Im2col,
            Op::Col2im(..) => OpKind::Col2im,
            Op::BmmLeft(..) => OpKind::BmmLeft,
            Op::BmmSumNt(..) => OpKind::BmmSumNt,
            Op::Upsample2x(..) => OpKind::Upsample2x,
            Op::PoolSum2x(..) => OpKind::PoolSum2x,
            Op::LogSoftmax(..) => OpKind::LogSoftmax,
            Op::Select(..) => OpKind::Select,
            Op::Embed(..) => OpKind::Embed,
        }
    }

    fn parents(&self) -> (Option<Var>, Option<Var>) {
        match *self {
            Op::Leaf => (None, None),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::BmmLeft(a, b)
            | Op::BmmSumNt(a, b) => (Some(a), Some(b)),
            Op::Neg(a)
            | Op::Affine(a, _)
            | Op::Exp(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Powf(a, _)
            | Op::LeakyRelu(a, _)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::BroadcastTo(a)
            | Op::SumTo(a)
            | Op::Im2col(a, _)
            | Op::Col2im(a, _)
            | Op::Upsample2x(a)
            | Op::PoolSum2x(a)
            | Op::LogSoftmax(a)
            | Op::Select(a, _)
            | Op::Embed(a, _) => (Some(a), None),
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A differentiation arena. One graph per meta iteration; dropping or
/// [`Graph::clear`]ing it releases every node at once.
#[derive(Debug, Clone)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    peak: usize,
    fault: Option<OpKind>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), peak: 0, fault: None }
    }

    /// Number of live nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Largest node count seen since construction or the last [`Graph::clear`].
    pub fn peak_len(&self) -> usize {
        self.peak.max(self.nodes.len())
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.peak = 0;
    }

    /// Negative-control fixture for gradient checking: scales every
    /// vector-Jacobian product emitted by `kind` by 1.5.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.index()].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.index()].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index()].requires_grad
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.index()].op.kind()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let (a, b) = op.parents();
        let requires_grad = a.is_some_and(|a| self.requires_grad(a))
            || b.is_some_and(|b| self.requires_grad(b));
        let id = Var(u32::try_from(self.nodes.len()).expect("graph exceeds u32 nodes"));
        self.nodes.push(Node { value, op, requires_grad });
        id
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let id = self.push(value, Op::Leaf);
        self.nodes[id.index()].requires_grad = true;
        id
    }

    /// A leaf that is never differentiated.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: T) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// A constant copy of `v`'s current value; cuts the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Neg(a))
    }

    /// `scale · a + shift` with constant scalars.
    pub fn affine(&mut self, a: Var, scale: T, shift: T) -> Var {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push(v, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, scale: T) -> Var {
        self.affine(a, scale, T::zero())
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(T::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(T::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    /// Elementwise `a^p` for a constant exponent.
    pub fn powf(&mut self, a: Var, p: T) -> Var {
        let v = self.value(a).map(|x| x.powf(p));
        self.push(v, Op::Powf(a, p))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let v = self.value(a).map(|x| if x >= T::zero() { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = kernels::transpose(self.value(a))?;
        Ok(self.push(v, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Right-aligned broadcast; size-1 and missing leading axes repeat.
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        let v = kernels::broadcast_to(self.value(a), shape)?;
        Ok(self.push(v, Op::BroadcastTo(a)))
    }

    /// Sums `a` down to a broadcast-compatible smaller shape.
    pub fn sum_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        let v = kernels::sum_to(self.value(a), shape)?;
        Ok(self.push(v, Op::SumTo(a)))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        self.sum_to(a, &[]).expect("every shape sums to a scalar")
    }

    pub fn im2col(&mut self, a: Var, geom: ConvGeometry) -> Result<Var> {
        let v = kernels::im2col(self.value(a), &geom)?;
        Ok(self.push(v, Op::Im2col(a, geom)))
    }

    pub fn col2im(&mut self, a: Var, geom: ConvGeometry) -> Result<Var> {
        let v = kernels::col2im(self.value(a), &geom)?;
        Ok(self.push(v, Op::Col2im(a, geom)))
    }

    pub fn bmm_left(&mut self, w: Var, x: Var) -> Result<Var> {
        let v = kernels::bmm_left(self.value(w), self.value(x))?;
        Ok(self.push(v, Op::BmmLeft(w, x)))
    }

    pub fn bmm_sum_nt(&mut self, a: Var, x: Var) -> Result<Var> {
        let v = kernels::bmm_sum_nt(self.value(a), self.value(x))?;
        Ok(self.push(v, Op::BmmSumNt(a, x)))
    }

    pub fn upsample2x(&mut self, a: Var) -> Result<Var> {
        let v = kernels::upsample2x(self.value(a))?;
        Ok(self.push(v, Op::Upsample2x(a)))
    }

    pub fn pool_sum2x(&mut self, a: Var) -> Result<Var> {
        let v = kernels::pool_sum2x(self.value(a))?;
        Ok(self.push(v, Op::PoolSum2x(a)))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let v = kernels::log_softmax(self.value(a))?;
        Ok(self.push(v, Op::LogSoftmax(a)))
    }

    /// Element `index` of a rank-1 tensor, as a scalar.
    pub fn select(&mut self, a: Var, index: usize) -> Result<Var> {
        let x = self.value(a);
        if x.rank() != 1 || index >= x.numel() {
            return Err(Error::Index { what: "select", index, len: x.numel() });
        }
        let v = Tensor::scalar(x.data()[index]);
        Ok(self.push(v, Op::Select(a, index)))
    }

    /// Scalar placed at `index` of a zero vector of length `len`.
    pub fn embed(&mut self, a: Var, index: usize, len: usize) -> Result<Var> {
        if self.value(a).numel() != 1 || index >= len {
            return Err(Error::Index { what: "embed", index, len });
        }
        let mut v = Tensor::zeros(&[len]);
        v.data_mut()[index] = self.value(a).item();
        Ok(self.push(v, Op::Embed(a, index)))
    }
}

impl<T: Scalar> Graph<T> {
    /// Reverse-mode gradients of the scalar `loss` with respect to `wrt`.
    ///
    /// With `build_graph` the returned gradients are live nodes that depend
    /// on the forward graph and can be differentiated again. Without it they
    /// are detached constants and the intermediate backward nodes are dropped.
    pub fn backward(&mut self, loss: Var, wrt: &[Var], build_graph: bool) -> Result<Vec<Var>> {
        if build_graph {
            return self.backward_nodes(loss, wrt);
        }
        let grads = self.gradients(loss, wrt)?;
        Ok(grads.into_iter().map(|g| self.constant(g)).collect())
    }

    /// Gradient values only; leaves the graph as it was.
    pub fn gradients(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor<T>>> {
        let mark = self.nodes.len();
        let result = self.backward_nodes(loss, wrt).map(|vars| {
            vars.into_iter().map(|v| self.value(v).clone()).collect::<Vec<_>>()
        });
        self.peak = self.peak.max(self.nodes.len());
        self.nodes.truncate(mark);
        result
    }

    /// Vector-Jacobian product `cotangentᵀ · ∂output/∂wrt` for a tensor-valued
    /// `output`; leaves the graph as it was.
    pub fn vector_jacobian(&mut self, output: Var, cotangent: &Tensor<T>, wrt: &[Var]) -> Result<Vec<Tensor<T>>> {
        if cotangent.shape() != self.shape(output) {
            return Err(Error::Dimension {
                op: "vector_jacobian",
                left: self.shape(output).to_vec(),
                right: cotangent.shape().to_vec(),
            });
        }
        let mark = self.nodes.len();
        let seed = self.constant(cotangent.clone());
        let result = self.backward_seeded(output, seed, wrt).map(|vars| {
            vars.into_iter().map(|v| self.value(v).clone()).collect::<Vec<_>>()
        });
        self.peak = self.peak.max(self.nodes.len());
        self.nodes.truncate(mark);
        result
    }

    fn backward_nodes(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Dimension {
                op: "backward",
                left: self.shape(loss).to_vec(),
                right: Vec::new(),
            });
        }
        let seed = self.constant(Tensor::ones(self.shape(loss)));
        self.backward_seeded(loss, seed, wrt)
    }

    fn backward_seeded(&mut self, loss: Var, seed: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let n = loss.index() + 1;
        // nodes downstream of some `wrt` entry
        let mut downstream = vec![false; n];
        for w in wrt {
            if w.index() < n {
                downstream[w.index()] = true;
            }
        }
        for i in 0..n {
            if !downstream[i] {
                let (a, b) = self.nodes[i].op.parents();
                downstream[i] = a.is_some_and(|a| downstream[a.index()])
                    || b.is_some_and(|b| downstream[b.index()]);
            }
        }
        // ... that also feed the loss
        let mut live = vec![false; n];
        live[loss.index()] = downstream[loss.index()];
        for i in (0..n).rev() {
            if live[i] {
                let (a, b) = self.nodes[i].op.parents();
                for p in [a, b].into_iter().flatten() {
                    if downstream[p.index()] {
                        live[p.index()] = true;
                    }
                }
            }
        }
        if let Some(pos) = wrt.iter().position(|w| w.index() >= n || !live[w.index()]) {
            return Err(Error::Unreachable { name: alloc::format!("#{pos}") });
        }

        let mut grads: Vec<Option<Var>> = vec![None; n];
        grads[loss.index()] = Some(seed);
        for i in (0..n).rev() {
            if !live[i] {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            let (a, b) = self.nodes[i].op.parents();
            let need_a = a.is_some_and(|a| live[a.index()]);
            let need_b = b.is_some_and(|b| live[b.index()]);
            if !need_a && !need_b {
                continue;
            }
            let (ga, gb) = self.vjp(Var(i as u32), g, need_a, need_b)?;
            for (p, gp, need) in [(a, ga, need_a), (b, gb, need_b)] {
                if let (Some(p), Some(gp), true) = (p, gp, need) {
                    let slot = &mut grads[p.index()];
                    *slot = Some(match *slot {
                        Some(prev) => self.add(prev, gp)?,
                        None => gp,
                    });
                }
            }
        }
        Ok(wrt.iter().map(|w| grads[w.index()].expect("live node has a gradient")).collect())
    }

    fn vjp(
        &mut self,
        node: Var,
        g: Var,
        need_a: bool,
        need_b: bool,
    ) -> Result<(Option<Var>, Option<Var>)> {
        let op = self.nodes[node.index()].op.clone();
        let one = T::one();
        let (ga, gb) = match op {
            Op::Leaf => (None, None),
            Op::Add(..) => (Some(g), Some(g)),
            Op::Sub(..) => (Some(g), need_b.then(|| self.neg(g))),
            Op::Mul(a, b) => (
                if need_a { Some(self.mul(g, b)?) } else { None },
                if need_b { Some(self.mul(g, a)?) } else { None },
            ),
            Op::Neg(_) => (Some(self.neg(g)), None),
            Op::Affine(_, scale) => (Some(self.scale(g, scale)), None),
            Op::Exp(_) => (Some(self.mul(g, node)?), None),
            Op::Tanh(_) => {
                let sq = self.mul(node, node)?;
                let d = self.affine(sq, -one, one);
                (Some(self.mul(g, d)?), None)
            }
            Op::Sigmoid(_) => {
                let c = self.affine(node, -one, one);
                let d = self.mul(node, c)?;
                (Some(self.mul(g, d)?), None)
            }
            Op::Powf(a, p) => {
                let d = self.powf(a, p - one);
                let d = self.scale(d, p);
                (Some(self.mul(g, d)?), None)
            }
            Op::LeakyRelu(a, slope) => {
                let mask = self.value(a).map(|x| if x >= T::zero() { one } else { slope });
                let mask = self.constant(mask);
                (Some(self.mul(g, mask)?), None)
            }
            Op::MatMul(a, b) => {
                let ga = if need_a {
                    let bt = self.transpose(b)?;
                    Some(self.matmul(g, bt)?)
                } else {
                    None
                };
                let gb = if need_b {
                    let at = self.transpose(a)?;
                    Some(self.matmul(at, g)?)
                } else {
                    None
                };
                (ga, gb)
            }
            Op::Transpose(_) => (Some(self.transpose(g)?), None),
            Op::Reshape(a) => {
                let shape = self.shape(a).to_vec();
                (Some(self.reshape(g, &shape)?), None)
            }
            Op::BroadcastTo(a) => {
                let shape = self.shape(a).to_vec();
                (Some(self.sum_to(g, &shape)?), None)
            }
            Op::SumTo(a) => {
                let shape = self.shape(a).to_vec();
                (Some(self.broadcast_to(g, &shape)?), None)
            }
            Op::Im2col(_, geom) => (Some(self.col2im(g, geom)?), None),
            Op::Col2im(_, geom) => (Some(self.im2col(g, geom)?), None),
            Op::BmmLeft(w, x) => {
                let gw = if need_a { Some(self.bmm_sum_nt(g, x)?) } else { None };
                let gx = if need_b {
                    let wt = self.transpose(w)?;
                    Some(self.bmm_left(wt, g)?)
                } else {
                    None
                };
                (gw, gx)
            }
            Op::BmmSumNt(a, x) => {
                let ga = if need_a { Some(self.bmm_left(g, x)?) } else { None };
                let gx = if need_b {
                    let gt = self.transpose(g)?;
                    Some(self.bmm_left(gt, a)?)
                } else {
                    None
                };
                (ga, gx)
            }
            Op::Upsample2x(_) => (Some(self.pool_sum2x(g)?), None),
            Op::PoolSum2x(_) => (Some(self.upsample2x(g)?), None),
            Op::LogSoftmax(_) => {
                let shape = self.shape(node).to_vec();
                let rows = self.sum_to(g, &[shape[0], 1])?;
                let rows = self.broadcast_to(rows, &shape)?;
                let p = self.exp(node);
                let t = self.mul(p, rows)?;
                (Some(self.sub(g, t)?), None)
            }
            Op::Select(a, index) => {
                let len = self.value(a).numel();
                (Some(self.embed(g, index, len)?), None)
            }
            Op::Embed(_, index) => {
                let s = self.select(g, index)?;
                (Some(s), None)
            }
        };
        if self.fault == Some(op.kind()) {
            let bump = T::from_f64_lossy(1.5);
            return Ok((ga.map(|v| self.scale(v, bump)), gb.map(|v| self.scale(v, bump))));
        }
        Ok((ga, gb))
    }
}
