//! Reverse-mode tape over dense tensors.
//!
//! Nodes are appended in topological order, so the forward pass is a single
//! left-to-right sweep and the backward pass the exact reverse. Both sweeps
//! iterate in fixed order, which makes evaluation and gradients bitwise
//! deterministic for a given graph and bindings.

use std::collections::BTreeMap;

use thiserror::Error;

use super::tensor::Tensor;
use crate::util::ARTANH_BOUND_EPS;

/// Handle to a node in one specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Leaf bindings for [`Graph::evaluate`], keyed by leaf name.
pub type Bindings = BTreeMap<String, Tensor>;

/// Per-leaf gradients returned by [`Graph::backward`].
pub type Gradients = BTreeMap<String, Tensor>;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("duplicate leaf name {0:?}")]
    DuplicateLeaf(String),
    #[error("leaf {0:?} is not bound")]
    UnboundLeaf(String),
    #[error("leaf {name:?} expects shape {expected:?} but binding has {got:?}")]
    LeafShape {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("graph has no output node set")]
    NoOutput,
    #[error("backward called before evaluate")]
    BackwardBeforeEvaluate,
    #[error("backward requires a scalar output, got {0:?}")]
    NonScalarOutput((usize, usize)),
    #[error("concat requires at least one input")]
    EmptyConcat,
    #[error("gradient for {name:?} has shape {got:?}, parameter has {expected:?}")]
    GradientShape {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
}

/// Primitive operations. Domain-restricted inverse trig ops clamp their
/// argument internally and propagate zero gradient outside the active range,
/// matching the clamp rule used everywhere else.
#[derive(Debug, Clone)]
enum Op {
    Leaf(String),
    Constant(Tensor),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    ConcatCols(Vec<NodeId>),
    Sum(NodeId),
    RowNorm(NodeId),
    Tanh(NodeId),
    Artanh(NodeId),
    Sin(NodeId),
    Cosh(NodeId),
    Arcosh(NodeId),
    Asin(NodeId),
    Acos(NodeId),
    Sqrt(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Clamp { input: NodeId, lo: f64, hi: f64 },
    Relu(NodeId),
    LogSumExp(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::Constant(_) => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::ConcatCols(_) => "concat_cols",
            Op::Sum(_) => "sum",
            Op::RowNorm(_) => "row_norm",
            Op::Tanh(_) => "tanh",
            Op::Artanh(_) => "artanh",
            Op::Sin(_) => "sin",
            Op::Cosh(_) => "cosh",
            Op::Arcosh(_) => "arcosh",
            Op::Asin(_) => "asin",
            Op::Acos(_) => "acos",
            Op::Sqrt(_) => "sqrt",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Clamp { .. } => "clamp",
            Op::Relu(_) => "relu",
            Op::LogSumExp(_) => "log_sum_exp",
        }
    }
}

struct Node {
    op: Op,
    shape: (usize, usize),
}

/// Recorded computation: a tape of primitive ops plus a designated scalar
/// output. Forward values are cached by [`Graph::evaluate`] for the
/// subsequent [`Graph::backward`] sweep.
pub struct Graph {
    nodes: Vec<Node>,
    leaves: Vec<NodeId>,
    output: Option<NodeId>,
    values: Option<Vec<Tensor>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            leaves: Vec::new(),
            output: None,
            values: None,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, op: Op, shape: (usize, usize)) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, shape });
        self.values = None;
        id
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].shape
    }

    pub fn leaf(&mut self, name: &str, rows: usize, cols: usize) -> Result<NodeId, GraphError> {
        for &l in &self.leaves {
            if let Op::Leaf(existing) = &self.nodes[l.0].op {
                if existing == name {
                    return Err(GraphError::DuplicateLeaf(name.to_string()));
                }
            }
        }
        let id = self.push(Op::Leaf(name.to_string()), (rows, cols));
        self.leaves.push(id);
        Ok(id)
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let shape = t.shape();
        self.push(Op::Constant(t), shape)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        make: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<NodeId, GraphError> {
        let shape = Tensor::broadcast_shape(self.shape(a), self.shape(b)).ok_or(
            GraphError::ShapeMismatch {
                op: op_name,
                lhs: self.shape(a),
                rhs: self.shape(b),
            },
        )?;
        Ok(self.push(make(a, b), shape))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary("add", a, b, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary("sub", a, b, Op::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary("mul", a, b, Op::Mul)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary("div", a, b, Op::Div)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a);
        self.push(Op::Neg(a), shape)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(GraphError::ShapeMismatch {
                op: "matmul",
                lhs: (ar, ac),
                rhs: (br, bc),
            });
        }
        Ok(self.push(Op::MatMul(a, b), (ar, bc)))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        self.push(Op::Transpose(a), (c, r))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, GraphError> {
        if parts.is_empty() {
            return Err(GraphError::EmptyConcat);
        }
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(GraphError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: (rows, cols),
                    rhs: (r, c),
                });
            }
            cols += c;
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), (rows, cols)))
    }

    /// Sum of all elements, a 1x1 scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), (1, 1))
    }

    /// Per-row Euclidean norm: RxC -> Rx1. Zero rows get zero gradient.
    pub fn row_norm(&mut self, a: NodeId) -> NodeId {
        let (r, _) = self.shape(a);
        self.push(Op::RowNorm(a), (r, 1))
    }

    fn unary(&mut self, a: NodeId, make: impl Fn(NodeId) -> Op) -> NodeId {
        let shape = self.shape(a);
        self.push(make(a), shape)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh)
    }

    /// artanh with the argument clamped to |x| <= 1 - 1e-7.
    pub fn artanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Artanh)
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sin)
    }

    pub fn cosh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Cosh)
    }

    /// arcosh with the argument clamped to x >= 1 + 1e-15.
    pub fn arcosh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Arcosh)
    }

    /// asin with the argument clamped to [-1, 1].
    pub fn asin(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Asin)
    }

    /// acos with the argument clamped to [-1, 1].
    pub fn acos(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Acos)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sqrt)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Exp)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Log)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let shape = self.shape(a);
        self.push(Op::Clamp { input: a, lo, hi }, shape)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Relu)
    }

    /// log(sum(exp(x))) over all elements, computed stably; a 1x1 scalar.
    pub fn log_sum_exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::LogSumExp(a), (1, 1))
    }

    pub fn set_output(&mut self, id: NodeId) {
        self.output = Some(id);
    }

    /// Run the forward sweep with the given leaf bindings, caching every
    /// intermediate for [`Graph::backward`]. Returns the output value.
    pub fn evaluate(&mut self, bindings: &Bindings) -> Result<Tensor, GraphError> {
        let output = self.output.ok_or(GraphError::NoOutput)?;
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let v = match &node.op {
                Op::Leaf(name) => {
                    let t = bindings
                        .get(name)
                        .ok_or_else(|| GraphError::UnboundLeaf(name.clone()))?;
                    if t.shape() != node.shape {
                        return Err(GraphError::LeafShape {
                            name: name.clone(),
                            expected: node.shape,
                            got: t.shape(),
                        });
                    }
                    t.clone()
                }
                Op::Constant(t) => t.clone(),
                Op::Add(a, b) => values[a.0].zip_broadcast(&values[b.0], |x, y| x + y),
                Op::Sub(a, b) => values[a.0].zip_broadcast(&values[b.0], |x, y| x - y),
                Op::Mul(a, b) => values[a.0].zip_broadcast(&values[b.0], |x, y| x * y),
                Op::Div(a, b) => values[a.0].zip_broadcast(&values[b.0], |x, y| x / y),
                Op::Neg(a) => values[a.0].map(|x| -x),
                Op::MatMul(a, b) => values[a.0].matmul(&values[b.0]),
                Op::Transpose(a) => values[a.0].transpose(),
                Op::ConcatCols(parts) => {
                    let rows = node.shape.0;
                    let cols = node.shape.1;
                    let mut out = Tensor::zeros(rows, cols);
                    let mut offset = 0;
                    for p in parts {
                        let t = &values[p.0];
                        for i in 0..rows {
                            for j in 0..t.cols() {
                                out.set(i, offset + j, t.get(i, j));
                            }
                        }
                        offset += t.cols();
                    }
                    out
                }
                Op::Sum(a) => Tensor::scalar(values[a.0].data().iter().sum()),
                Op::RowNorm(a) => {
                    let t = &values[a.0];
                    let mut out = Tensor::zeros(t.rows(), 1);
                    for i in 0..t.rows() {
                        let n = t.row_slice(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                        out.set(i, 0, n);
                    }
                    out
                }
                Op::Tanh(a) => values[a.0].map(f64::tanh),
                Op::Artanh(a) => values[a.0].map(|x| {
                    let z = x.clamp(-(1.0 - ARTANH_BOUND_EPS), 1.0 - ARTANH_BOUND_EPS);
                    z.atanh()
                }),
                Op::Sin(a) => values[a.0].map(f64::sin),
                Op::Cosh(a) => values[a.0].map(f64::cosh),
                Op::Arcosh(a) => values[a.0].map(|x| x.max(1.0 + ARCOSH_FLOOR_EPS).acosh()),
                Op::Asin(a) => values[a.0].map(|x| x.clamp(-1.0, 1.0).asin()),
                Op::Acos(a) => values[a.0].map(|x| x.clamp(-1.0, 1.0).acos()),
                Op::Sqrt(a) => values[a.0].map(f64::sqrt),
                Op::Exp(a) => values[a.0].map(f64::exp),
                Op::Log(a) => values[a.0].map(f64::ln),
                Op::Clamp { input, lo, hi } => values[input.0].map(|x| x.clamp(*lo, *hi)),
                Op::Relu(a) => values[a.0].map(|x| x.max(0.0)),
                Op::LogSumExp(a) => {
                    let xs = values[a.0].data();
                    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
                    Tensor::scalar(m + s.ln())
                }
            };
            if !v.is_finite() {
                return Err(GraphError::NonFinite {
                    node: idx,
                    op: node.op.name(),
                });
            }
            values.push(v);
        }
        let out = values[output.0].clone();
        self.values = Some(values);
        Ok(out)
    }

    /// Forward value cached for `id` by the last [`Graph::evaluate`] call.
    pub fn value_of(&self, id: NodeId) -> Option<&Tensor> {
        self.values.as_ref().map(|v| &v[id.0])
    }

    /// Reverse sweep with seed 1, returning a gradient tensor for every leaf
    /// (zero for leaves the output does not depend on).
    pub fn backward(&mut self) -> Result<Gradients, GraphError> {
        self.backward_with_seed(1.0)
    }

    pub fn backward_with_seed(&mut self, seed: f64) -> Result<Gradients, GraphError> {
        let output = self.output.ok_or(GraphError::NoOutput)?;
        let values = self
            .values
            .as_ref()
            .ok_or(GraphError::BackwardBeforeEvaluate)?;
        if self.nodes[output.0].shape != (1, 1) {
            return Err(GraphError::NonScalarOutput(self.nodes[output.0].shape));
        }

        let mut adjoint: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.shape.0, n.shape.1))
            .collect();
        adjoint[output.0] = Tensor::scalar(seed);

        for idx in (0..=output.0).rev() {
            let grad = adjoint[idx].clone();
            if grad.data().iter().all(|&g| g == 0.0) {
                continue;
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf(_) | Op::Constant(_) => {}
                Op::Add(a, b) => {
                    accumulate(&mut adjoint, *a, &grad.reduce_to_shape(self.nodes[a.0].shape));
                    accumulate(&mut adjoint, *b, &grad.reduce_to_shape(self.nodes[b.0].shape));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adjoint, *a, &grad.reduce_to_shape(self.nodes[a.0].shape));
                    let gb = grad.map(|g| -g).reduce_to_shape(self.nodes[b.0].shape);
                    accumulate(&mut adjoint, *b, &gb);
                }
                Op::Mul(a, b) => {
                    let va = &values[a.0];
                    let vb = &values[b.0];
                    let ga = grad
                        .zip_broadcast(vb, |g, y| g * y)
                        .reduce_to_shape(self.nodes[a.0].shape);
                    let gb = grad
                        .zip_broadcast(va, |g, x| g * x)
                        .reduce_to_shape(self.nodes[b.0].shape);
                    accumulate(&mut adjoint, *a, &ga);
                    accumulate(&mut adjoint, *b, &gb);
                }
                Op::Div(a, b) => {
                    let va = &values[a.0];
                    let vb = &values[b.0];
                    let ga = grad
                        .zip_broadcast(vb, |g, y| g / y)
                        .reduce_to_shape(self.nodes[a.0].shape);
                    // d(x/y)/dy = -x/y^2
                    let gxy = grad.zip_broadcast(va, |g, x| g * x);
                    let gb = gxy
                        .zip_broadcast(vb, |gx, y| -gx / (y * y))
                        .reduce_to_shape(self.nodes[b.0].shape);
                    accumulate(&mut adjoint, *a, &ga);
                    accumulate(&mut adjoint, *b, &gb);
                }
                Op::Neg(a) => {
                    let ga = grad.map(|g| -g);
                    accumulate(&mut adjoint, *a, &ga);
                }
                Op::MatMul(a, b) => {
                    let ga = grad.matmul(&values[b.0].transpose());
                    let gb = values[a.0].transpose().matmul(&grad);
                    accumulate(&mut adjoint, *a, &ga);
                    accumulate(&mut adjoint, *b, &gb);
                }
                Op::Transpose(a) => {
                    let ga = grad.transpose();
                    accumulate(&mut adjoint, *a, &ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (rows, cols) = self.nodes[p.0].shape;
                        let mut gp = Tensor::zeros(rows, cols);
                        for i in 0..rows {
                            for j in 0..cols {
                                gp.set(i, j, grad.get(i, offset + j));
                            }
                        }
                        accumulate(&mut adjoint, *p, &gp);
                        offset += cols;
                    }
                }
                Op::Sum(a) => {
                    let g = grad.item();
                    let (r, c) = self.nodes[a.0].shape;
                    let ga = Tensor::from_vec(r, c, vec![g; r * c]);
                    accumulate(&mut adjoint, *a, &ga);
                }
                Op::RowNorm(a) => {
                    let va = &values[a.0];
                    let vy = &values[idx];
                    let mut ga = Tensor::zeros(va.rows(), va.cols());
                    for i in 0..va.rows() {
                        let n = vy.get(i, 0);
                        if n <= 0.0 {
                            continue;
                        }
                        let g = grad.get(i, 0);
                        for j in 0..va.cols() {
                            ga.set(i, j, g * va.get(i, j) / n);
                        }
                    }
                    accumulate(&mut adjoint, *a, &ga);
                }
                Op::Tanh(a) => {
                    let vy = &values[idx];
                    let ga = grad.zip_broadcast(vy, |g, y| g * (1.0 - y * y));
                    accumulate(&mut adjoint, *a, &ga);
                }
                Op::Artanh(a) => {
                    let va = &values[a.0];
                    let bound = 1.0 - ARTANH_BOUND_EPS;
                    let ga = grad.zip_broadcast(va, |g, x| {
                        if x.abs() < bound {
                            g / (1.0 - x * x)
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut adjoint, *a, &ga);
                }
                Op::Sin(a) => {
                    let va = &values[a.0];
                    let ga = grad.zip_broadcast(va, |g, x| g * x.cos());
                    accumulate(&mut adjoint, *a, &ga);
                }
                Op::Cosh(a) => {
                    let va = &values[a.0];
                    let ga = grad.zip_broadcast(va, |g, x| g * x.sinh());
                    accumulate(&mut adjoint, *a, &ga);
                }
                Op::Arcosh(a) => {
                    let va = &values[a.0];
                    let floor = 1.0 + ARCOSH_FLOOR_EPS;
                    let ga = grad.zip_broadcast(va, |g, x| {
                        if x > floor {
                            g / (x * x - 1.0).sqrt()
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut adjoint, *a, &ga);
                }
                Op::Asin(a) => {
                    let va = &values[a.0];
                    let ga = grad.zip_broadcast(va, |g, x| {
                        if x.abs() < 1.0 {
                            g / (1.0 - x * x).sqrt()
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut adjoint, *a, &ga);
                }
                Op::Acos(a) => {
                    let va = &values[a.0];
                    let ga = grad.zip_broadcast(va, |g, x| {
                        if x.abs() < 1.0 {
                            -g / (1.0 - x * x).sqrt()
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut adjoint, *a, &ga);
                }
                Op::Sqrt(a) => {
                    let vy = &values[idx];
                    let ga = grad.zip_broadcast(vy, |g, y| if y > 0.0 { g / (2.0 * y) } else { 0.0 });
                    accumulate(&mut adjoint, *a, &ga);
                }
                Op::Exp(a) => {
                    let vy = &values[idx];
                    let ga = grad.zip_broadcast(vy, |g, y| g * y);
                    accumulate(&mut adjoint, *a, &ga);
                }
                Op::Log(a) => {
                    let va = &values[a.0];
                    let ga = grad.zip_broadcast(va, |g, x| g / x);
                    accumulate(&mut adjoint, *a, &ga);
                }
                Op::Clamp { input, lo, hi } => {
                    let va = &values[input.0];
                    let (lo, hi) = (*lo, *hi);
                    let ga = grad
                        .zip_broadcast(va, |g, x| if x > lo && x < hi { g } else { 0.0 });
                    accumulate(&mut adjoint, *input, &ga);
                }
                Op::Relu(a) => {
                    let va = &values[a.0];
                    let ga = grad.zip_broadcast(va, |g, x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut adjoint, *a, &ga);
                }
                Op::LogSumExp(a) => {
                    let va = &values[a.0];
                    let y = values[idx].item();
                    let g = grad.item();
                    let ga = va.map(|x| g * (x - y).exp());
                    accumulate(&mut adjoint, *a, &ga);
                }
            }
        }

        let mut grads = Gradients::new();
        for &l in &self.leaves {
            if let Op::Leaf(name) = &self.nodes[l.0].op {
                grads.insert(name.clone(), adjoint[l.0].clone());
            }
        }
        Ok(grads)
    }
}

const ARCOSH_FLOOR_EPS: f64 = 1e-15;

fn accumulate(adjoint: &mut [Tensor], id: NodeId, g: &Tensor) {
    let slot = &mut adjoint[id.0];
    debug_assert_eq!(slot.shape(), g.shape());
    for (a, b) in slot.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}
