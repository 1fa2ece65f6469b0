//! Computational graphs over integer tensors.
//!
//! A graph represents a multivariate polynomial function as a DAG of tensor
//! ops. Every node carries a tensor shape and an integer interval that bounds
//! every element the node can produce for in-domain inputs. The intervals
//! drive plaintext-modulus estimation; the exact evaluator in [`eval`] doubles
//! as the correctness oracle for the encrypted executor.
//!
//! Only polynomial ops exist: there is deliberately no ReLU, sigmoid, max
//! pool, or division, since the encrypted backend cannot compute them.

mod eval;
mod serial;

pub use eval::{BigTensor, Feeds};

use num_bigint::{BigInt, BigUint};
use num_traits::Zero;
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("tensor shape {shape:?} implies {want} elements, got {got}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        want: usize,
        got: usize,
    },
    #[error("empty interval: lower bound {lo} exceeds upper bound {hi}")]
    EmptyInterval { lo: BigInt, hi: BigInt },
    #[error("saturation must be at least 1, got {0}")]
    BadSaturation(i64),
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad attribute: {0}")]
    BadAttribute(String),
    #[error("calibration batch is empty")]
    EmptyBatch,
    #[error("no feed supplied for placeholder {0}")]
    MissingFeed(NodeId),
    #[error("feed for node {node} has shape {got:?}, placeholder wants {want:?}")]
    FeedShape {
        node: NodeId,
        want: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("serialization: {0}")]
    Serialization(String),
}

/// Dense integer tensor in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntTensor {
    shape: Vec<usize>,
    data: Vec<i64>,
}

impl IntTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i64>) -> Result<Self, GraphError> {
        let want: usize = shape.iter().product();
        if shape.is_empty() || want != data.len() || want == 0 {
            return Err(GraphError::ShapeDataMismatch {
                want,
                got: data.len(),
                shape,
            });
        }
        Ok(IntTensor { shape, data })
    }

    pub fn scalar(v: i64) -> Self {
        IntTensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, GraphError> {
        let len = shape.iter().product();
        Self::new(shape, vec![0; len])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn bounds(&self) -> (i64, i64) {
        let lo = *self.data.iter().min().expect("tensor is never empty");
        let hi = *self.data.iter().max().expect("tensor is never empty");
        (lo, hi)
    }
}

/// Closed integer interval [lo, hi].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interval {
    lo: BigInt,
    hi: BigInt,
}

impl Interval {
    pub fn new(lo: BigInt, hi: BigInt) -> Result<Self, GraphError> {
        if lo > hi {
            return Err(GraphError::EmptyInterval { lo, hi });
        }
        Ok(Interval { lo, hi })
    }

    pub fn from_i64(lo: i64, hi: i64) -> Result<Self, GraphError> {
        Self::new(BigInt::from(lo), BigInt::from(hi))
    }

    pub fn point(v: i64) -> Self {
        Interval {
            lo: BigInt::from(v),
            hi: BigInt::from(v),
        }
    }

    pub fn lo(&self) -> &BigInt {
        &self.lo
    }

    pub fn hi(&self) -> &BigInt {
        &self.hi
    }

    pub fn contains(&self, v: &BigInt) -> bool {
        &self.lo <= v && v <= &self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// Largest absolute value in the interval.
    pub fn max_abs(&self) -> BigUint {
        self.lo.magnitude().max(self.hi.magnitude()).clone()
    }

    fn union(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.clone().min(other.lo.clone()),
            hi: self.hi.clone().max(other.hi.clone()),
        }
    }

    fn add(&self, other: &Interval) -> Interval {
        Interval {
            lo: &self.lo + &other.lo,
            hi: &self.hi + &other.hi,
        }
    }

    fn sub(&self, other: &Interval) -> Interval {
        Interval {
            lo: &self.lo - &other.hi,
            hi: &self.hi - &other.lo,
        }
    }

    fn neg(&self) -> Interval {
        Interval {
            lo: -self.hi.clone(),
            hi: -self.lo.clone(),
        }
    }

    fn mul(&self, other: &Interval) -> Interval {
        let corners = [
            &self.lo * &other.lo,
            &self.lo * &other.hi,
            &self.hi * &other.lo,
            &self.hi * &other.hi,
        ];
        Interval {
            lo: corners.iter().min().unwrap().clone(),
            hi: corners.iter().max().unwrap().clone(),
        }
    }

    /// Both factors are the same value, so the result is never negative and
    /// the corner rule for independent operands would be needlessly loose.
    fn square(&self) -> Interval {
        let lo2 = &self.lo * &self.lo;
        let hi2 = &self.hi * &self.hi;
        if self.lo.sign() != num_bigint::Sign::Plus && self.hi.sign() != num_bigint::Sign::Minus {
            Interval {
                lo: BigInt::zero(),
                hi: lo2.max(hi2),
            }
        } else {
            Interval {
                lo: lo2.clone().min(hi2.clone()),
                hi: lo2.max(hi2),
            }
        }
    }

    /// Range of a weighted sum whose every summand lies in this interval:
    /// positive coefficients stretch toward the same bound, negative ones
    /// toward the opposite.
    fn weighted_sum(&self, coeffs: impl Iterator<Item = i64>) -> Interval {
        let mut pos = 0i128;
        let mut neg = 0i128;
        for w in coeffs {
            if w >= 0 {
                pos += w as i128;
            } else {
                neg += w as i128;
            }
        }
        Interval {
            lo: &self.lo * pos + &self.hi * neg,
            hi: &self.hi * pos + &self.lo * neg,
        }
    }
}

/// Operation kinds. Weight tensors and gate masks are attributes, not input
/// nodes: the evaluating party always holds them in the clear.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Placeholder { saturation: i64, signed: bool },
    Const { value: IntTensor },
    Add,
    Sub,
    Neg,
    Mul,
    Square,
    /// x[in] times w[in, out]: out_j = sum_i x_i w_ij.
    MatMul { weights: IntTensor },
    /// Input [h, w, c_in], kernel [kh, kw, c_in, c_out], valid padding.
    Conv2D {
        kernel: IntTensor,
        strides: (usize, usize),
    },
    /// Window sum per channel, valid padding, no division.
    SumPool {
        kernel: (usize, usize),
        strides: (usize, usize),
    },
    Flatten,
    /// Per-channel binary gates over the last dimension; gate 0 zeroes the
    /// whole feature map.
    GateMask { gates: Vec<u8> },
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Placeholder { .. } => "placeholder",
            OpKind::Const { .. } => "const",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Neg => "neg",
            OpKind::Mul => "mul",
            OpKind::Square => "square",
            OpKind::MatMul { .. } => "matmul",
            OpKind::Conv2D { .. } => "conv2d",
            OpKind::SumPool { .. } => "sum_pool",
            OpKind::Flatten => "flatten",
            OpKind::GateMask { .. } => "gate_mask",
        }
    }

    /// Ops that consume one ciphertext-ciphertext multiplication level.
    fn is_multiplicative(&self) -> bool {
        matches!(
            self,
            OpKind::Mul
                | OpKind::Square
                | OpKind::MatMul { .. }
                | OpKind::Conv2D { .. }
        )
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub op: OpKind,
    pub inputs: Vec<NodeId>,
    pub shape: Vec<usize>,
    pub domain: Interval,
}

/// Sparse linear expansion of a structural op: for every flat output element,
/// the integer-weighted input elements that form it. Zero coefficients are
/// dropped, so an empty term list means the element is identically zero.
#[derive(Debug, Clone)]
pub struct LinearMap {
    pub out_shape: Vec<usize>,
    pub terms: Vec<Vec<(usize, i64)>>,
}

#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    output: NodeId,
    recorded_output_domain: Option<Interval>,
}

#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        GraphBuilder::default()
    }

    fn node(&self, id: NodeId) -> Result<&Node, GraphError> {
        self.nodes.get(id).ok_or(GraphError::UnknownNode(id))
    }

    fn push(&mut self, op: OpKind, inputs: Vec<NodeId>) -> Result<NodeId, GraphError> {
        let id = self.nodes.len();
        let shape = infer_shape(&op, &inputs, &self.nodes)?;
        let domain = infer_domain(&op, &inputs, &self.nodes)?;
        self.nodes.push(Node {
            id,
            op,
            inputs,
            shape,
            domain,
        });
        Ok(id)
    }

    /// Input data slot. Non-negative inputs get domain [0, saturation],
    /// signed ones [-saturation, saturation].
    pub fn placeholder(
        &mut self,
        shape: &[usize],
        saturation: i64,
        signed: bool,
    ) -> Result<NodeId, GraphError> {
        if saturation < 1 {
            return Err(GraphError::BadSaturation(saturation));
        }
        if shape.is_empty() || shape.iter().product::<usize>() == 0 {
            return Err(GraphError::ShapeMismatch(format!(
                "placeholder shape {shape:?} is empty"
            )));
        }
        let op = OpKind::Placeholder { saturation, signed };
        let id = self.nodes.len();
        let domain = if signed {
            Interval::from_i64(-saturation, saturation)?
        } else {
            Interval::from_i64(0, saturation)?
        };
        self.nodes.push(Node {
            id,
            op,
            inputs: vec![],
            shape: shape.to_vec(),
            domain,
        });
        Ok(id)
    }

    pub fn constant(&mut self, value: IntTensor) -> NodeId {
        let id = self.nodes.len();
        let (lo, hi) = value.bounds();
        let shape = value.shape().to_vec();
        self.nodes.push(Node {
            id,
            op: OpKind::Const { value },
            inputs: vec![],
            shape,
            domain: Interval::from_i64(lo, hi).expect("min <= max"),
        });
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.node(a)?;
        self.node(b)?;
        self.push(OpKind::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.node(a)?;
        self.node(b)?;
        self.push(OpKind::Sub, vec![a, b])
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.node(a)?;
        self.push(OpKind::Neg, vec![a])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.node(a)?;
        self.node(b)?;
        self.push(OpKind::Mul, vec![a, b])
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.node(a)?;
        self.push(OpKind::Square, vec![a])
    }

    pub fn matmul(&mut self, x: NodeId, weights: IntTensor) -> Result<NodeId, GraphError> {
        self.node(x)?;
        self.push(OpKind::MatMul { weights }, vec![x])
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        kernel: IntTensor,
        strides: (usize, usize),
    ) -> Result<NodeId, GraphError> {
        self.node(x)?;
        self.push(OpKind::Conv2D { kernel, strides }, vec![x])
    }

    pub fn sum_pool(
        &mut self,
        x: NodeId,
        kernel: (usize, usize),
        strides: (usize, usize),
    ) -> Result<NodeId, GraphError> {
        self.node(x)?;
        self.push(OpKind::SumPool { kernel, strides }, vec![x])
    }

    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.node(x)?;
        self.push(OpKind::Flatten, vec![x])
    }

    pub fn gate_mask(&mut self, x: NodeId, gates: Vec<u8>) -> Result<NodeId, GraphError> {
        self.node(x)?;
        self.push(OpKind::GateMask { gates }, vec![x])
    }

    pub fn build(self, output: NodeId) -> Result<Graph, GraphError> {
        if output >= self.nodes.len() {
            return Err(GraphError::UnknownNode(output));
        }
        Ok(Graph {
            nodes: self.nodes,
            output,
            recorded_output_domain: None,
        })
    }
}

impl Graph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, GraphError> {
        self.nodes.get(id).ok_or(GraphError::UnknownNode(id))
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.nodes[self.output].shape
    }

    /// Interval bound on the output from static propagation.
    pub fn output_domain(&self) -> &Interval {
        &self.nodes[self.output].domain
    }

    /// Calibration-recorded output interval, when one was recorded.
    pub fn recorded_output_domain(&self) -> Option<&Interval> {
        self.recorded_output_domain.as_ref()
    }

    /// The interval parameter selection should size the plaintext modulus
    /// for: the recorded one when present, the propagated bound otherwise.
    pub fn sizing_domain(&self) -> &Interval {
        self.recorded_output_domain
            .as_ref()
            .unwrap_or_else(|| self.output_domain())
    }

    pub fn set_recorded_output_domain(&mut self, domain: Interval) {
        self.recorded_output_domain = Some(domain);
    }

    pub fn placeholders(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, OpKind::Placeholder { .. }))
            .map(|n| n.id)
            .collect()
    }

    /// Node ids that feed the output, in topological order.
    pub fn ancestors_of_output(&self) -> Vec<NodeId> {
        let mut needed = vec![false; self.nodes.len()];
        let mut stack = vec![self.output];
        while let Some(id) = stack.pop() {
            if needed[id] {
                continue;
            }
            needed[id] = true;
            stack.extend(self.nodes[id].inputs.iter().copied());
        }
        (0..self.nodes.len()).filter(|&i| needed[i]).collect()
    }

    /// Maximum number of multiplicative ops on any path into the output.
    pub fn multiplicative_depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        for id in self.ancestors_of_output() {
            let node = &self.nodes[id];
            let input_depth = node
                .inputs
                .iter()
                .map(|&i| depth[i])
                .max()
                .unwrap_or(0);
            depth[id] = input_depth + usize::from(node.op.is_multiplicative());
        }
        depth[self.output]
    }

    /// Per-element expansion of a structural op, when the node has one.
    pub fn linear_map(&self, id: NodeId) -> Result<Option<LinearMap>, GraphError> {
        let node = self.node(id)?;
        match node.op {
            OpKind::MatMul { .. }
            | OpKind::Conv2D { .. }
            | OpKind::SumPool { .. }
            | OpKind::Flatten
            | OpKind::GateMask { .. } => {
                let input_shape = &self.nodes[node.inputs[0]].shape;
                linear_map_of(&node.op, input_shape).map(Some)
            }
            _ => Ok(None),
        }
    }

    /// Re-derives every shape and domain from the graph structure; used after
    /// deserialization to reject inconsistent documents.
    pub(crate) fn recompute_and_check(&mut self) -> Result<(), GraphError> {
        for idx in 0..self.nodes.len() {
            let node = &self.nodes[idx];
            let arity = match node.op {
                OpKind::Placeholder { .. } | OpKind::Const { .. } => 0,
                OpKind::Add | OpKind::Sub | OpKind::Mul => 2,
                _ => 1,
            };
            if node.inputs.len() != arity {
                return Err(GraphError::Serialization(format!(
                    "node {idx} ({}) has {} inputs, expected {arity}",
                    node.op.name(),
                    node.inputs.len()
                )));
            }
            for &input in &node.inputs {
                if input >= idx {
                    return Err(GraphError::Serialization(format!(
                        "node {idx} references node {input}, which does not precede it"
                    )));
                }
            }
            let (shape, domain) = match node.op {
                OpKind::Placeholder { saturation, signed } => {
                    if saturation < 1 {
                        return Err(GraphError::BadSaturation(saturation));
                    }
                    if node.shape.is_empty() || node.shape.iter().product::<usize>() == 0 {
                        return Err(GraphError::ShapeMismatch(format!(
                            "placeholder shape {:?} is empty",
                            node.shape
                        )));
                    }
                    let domain = if signed {
                        Interval::from_i64(-saturation, saturation)?
                    } else {
                        Interval::from_i64(0, saturation)?
                    };
                    (node.shape.clone(), domain)
                }
                OpKind::Const { ref value } => {
                    let (lo, hi) = value.bounds();
                    (value.shape().to_vec(), Interval::from_i64(lo, hi)?)
                }
                _ => (
                    infer_shape(&node.op, &node.inputs, &self.nodes)?,
                    infer_domain(&node.op, &node.inputs, &self.nodes)?,
                ),
            };
            let node = &mut self.nodes[idx];
            node.id = idx;
            node.shape = shape;
            node.domain = domain;
        }
        if self.output >= self.nodes.len() {
            return Err(GraphError::UnknownNode(self.output));
        }
        Ok(())
    }
}

fn elementwise_shape(
    op: &OpKind,
    inputs: &[NodeId],
    nodes: &[Node],
) -> Result<Vec<usize>, GraphError> {
    let a = &nodes[inputs[0]];
    if inputs.len() == 2 {
        let b = &nodes[inputs[1]];
        if a.shape != b.shape {
            return Err(GraphError::ShapeMismatch(format!(
                "{} operands have shapes {:?} and {:?}",
                op.name(),
                a.shape,
                b.shape
            )));
        }
    }
    Ok(a.shape.clone())
}

fn conv_output_hw(
    input: (usize, usize),
    kernel: (usize, usize),
    strides: (usize, usize),
) -> Result<(usize, usize), GraphError> {
    let (h, w) = input;
    let (kh, kw) = kernel;
    let (sh, sw) = strides;
    if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
        return Err(GraphError::BadAttribute(
            "kernel and stride sizes must be positive".into(),
        ));
    }
    if kh > h || kw > w {
        return Err(GraphError::ShapeMismatch(format!(
            "kernel {kh}x{kw} exceeds input {h}x{w} with valid padding"
        )));
    }
    Ok(((h - kh) / sh + 1, (w - kw) / sw + 1))
}

fn infer_shape(op: &OpKind, inputs: &[NodeId], nodes: &[Node]) -> Result<Vec<usize>, GraphError> {
    match op {
        OpKind::Placeholder { .. } | OpKind::Const { .. } => {
            unreachable!("source nodes set their shape directly")
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul => elementwise_shape(op, inputs, nodes),
        OpKind::Neg | OpKind::Square => Ok(nodes[inputs[0]].shape.clone()),
        OpKind::MatMul { weights } => {
            let x = &nodes[inputs[0]];
            if weights.shape().len() != 2 {
                return Err(GraphError::BadAttribute(format!(
                    "matmul weights must be 2-D, got {:?}",
                    weights.shape()
                )));
            }
            let (w_in, w_out) = (weights.shape()[0], weights.shape()[1]);
            if x.shape.len() != 1 || x.shape[0] != w_in {
                return Err(GraphError::ShapeMismatch(format!(
                    "matmul input {:?} does not match weights [{w_in}, {w_out}]",
                    x.shape
                )));
            }
            Ok(vec![w_out])
        }
        OpKind::Conv2D { kernel, strides } => {
            let x = &nodes[inputs[0]];
            if kernel.shape().len() != 4 {
                return Err(GraphError::BadAttribute(format!(
                    "conv kernel must be 4-D [kh, kw, c_in, c_out], got {:?}",
                    kernel.shape()
                )));
            }
            let (kh, kw, c_in, c_out) = (
                kernel.shape()[0],
                kernel.shape()[1],
                kernel.shape()[2],
                kernel.shape()[3],
            );
            if x.shape.len() != 3 || x.shape[2] != c_in {
                return Err(GraphError::ShapeMismatch(format!(
                    "conv input {:?} does not match kernel channels {c_in}",
                    x.shape
                )));
            }
            let (oh, ow) = conv_output_hw((x.shape[0], x.shape[1]), (kh, kw), *strides)?;
            Ok(vec![oh, ow, c_out])
        }
        OpKind::SumPool { kernel, strides } => {
            let x = &nodes[inputs[0]];
            if x.shape.len() != 3 {
                return Err(GraphError::ShapeMismatch(format!(
                    "sum pool needs a [h, w, c] input, got {:?}",
                    x.shape
                )));
            }
            let (oh, ow) = conv_output_hw((x.shape[0], x.shape[1]), *kernel, *strides)?;
            Ok(vec![oh, ow, x.shape[2]])
        }
        OpKind::Flatten => {
            let x = &nodes[inputs[0]];
            Ok(vec![x.shape.iter().product()])
        }
        OpKind::GateMask { gates } => {
            let x = &nodes[inputs[0]];
            let channels = *x.shape.last().expect("shapes are never empty");
            if gates.len() != channels {
                return Err(GraphError::BadAttribute(format!(
                    "{} gates for {channels} channels",
                    gates.len()
                )));
            }
            if gates.iter().any(|&g| g > 1) {
                return Err(GraphError::BadAttribute(
                    "gates must be 0 or 1".into(),
                ));
            }
            Ok(x.shape.clone())
        }
    }
}

fn infer_domain(op: &OpKind, inputs: &[NodeId], nodes: &[Node]) -> Result<Interval, GraphError> {
    let dom = |idx: usize| &nodes[inputs[idx]].domain;
    Ok(match op {
        OpKind::Placeholder { .. } | OpKind::Const { .. } => {
            unreachable!("source nodes set their domain directly")
        }
        OpKind::Add => dom(0).add(dom(1)),
        OpKind::Sub => dom(0).sub(dom(1)),
        OpKind::Neg => dom(0).neg(),
        OpKind::Mul => dom(0).mul(dom(1)),
        OpKind::Square => dom(0).square(),
        OpKind::MatMul { weights } => {
            let (w_in, w_out) = (weights.shape()[0], weights.shape()[1]);
            let x = dom(0);
            let mut result: Option<Interval> = None;
            for j in 0..w_out {
                let col = x.weighted_sum((0..w_in).map(|i| weights.data()[i * w_out + j]));
                result = Some(match result {
                    Some(r) => r.union(&col),
                    None => col,
                });
            }
            result.expect("weights have at least one column")
        }
        OpKind::Conv2D { kernel, .. } => {
            let (kh, kw, c_in, c_out) = (
                kernel.shape()[0],
                kernel.shape()[1],
                kernel.shape()[2],
                kernel.shape()[3],
            );
            let x = dom(0);
            let mut result: Option<Interval> = None;
            for co in 0..c_out {
                let per_channel = x.weighted_sum(
                    (0..kh * kw * c_in).map(|i| kernel.data()[i * c_out + co]),
                );
                result = Some(match result {
                    Some(r) => r.union(&per_channel),
                    None => per_channel,
                });
            }
            result.expect("kernel has at least one output channel")
        }
        OpKind::SumPool { kernel, .. } => {
            dom(0).weighted_sum(std::iter::repeat_n(1i64, kernel.0 * kernel.1))
        }
        OpKind::Flatten => dom(0).clone(),
        OpKind::GateMask { gates } => {
            let x = dom(0);
            let any_open = gates.iter().any(|&g| g == 1);
            let any_closed = gates.iter().any(|&g| g == 0);
            match (any_open, any_closed) {
                (false, _) => Interval::point(0),
                (true, false) => x.clone(),
                (true, true) => x.union(&Interval::point(0)),
            }
        }
    })
}

/// Expands a structural op over a concrete input shape.
fn linear_map_of(op: &OpKind, input_shape: &[usize]) -> Result<LinearMap, GraphError> {
    match op {
        OpKind::MatMul { weights } => {
            let (w_in, w_out) = (weights.shape()[0], weights.shape()[1]);
            let terms = (0..w_out)
                .map(|j| {
                    (0..w_in)
                        .filter_map(|i| {
                            let w = weights.data()[i * w_out + j];
                            (w != 0).then_some((i, w))
                        })
                        .collect()
                })
                .collect();
            Ok(LinearMap {
                out_shape: vec![w_out],
                terms,
            })
        }
        OpKind::Conv2D { kernel, strides } => {
            let (h, w, c_in) = (input_shape[0], input_shape[1], input_shape[2]);
            let (kh, kw) = (kernel.shape()[0], kernel.shape()[1]);
            let c_out = kernel.shape()[3];
            let (oh, ow) = conv_output_hw((h, w), (kh, kw), *strides)?;
            let mut terms = Vec::with_capacity(oh * ow * c_out);
            for oy in 0..oh {
                for ox in 0..ow {
                    for co in 0..c_out {
                        let mut row = Vec::with_capacity(kh * kw * c_in);
                        for ky in 0..kh {
                            for kx in 0..kw {
                                for ci in 0..c_in {
                                    let wv = kernel.data()
                                        [((ky * kw + kx) * c_in + ci) * c_out + co];
                                    if wv != 0 {
                                        let iy = oy * strides.0 + ky;
                                        let ix = ox * strides.1 + kx;
                                        row.push(((iy * w + ix) * c_in + ci, wv));
                                    }
                                }
                            }
                        }
                        terms.push(row);
                    }
                }
            }
            Ok(LinearMap {
                out_shape: vec![oh, ow, c_out],
                terms,
            })
        }
        OpKind::SumPool { kernel, strides } => {
            let (h, w, c) = (input_shape[0], input_shape[1], input_shape[2]);
            let (oh, ow) = conv_output_hw((h, w), *kernel, *strides)?;
            let mut terms = Vec::with_capacity(oh * ow * c);
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut row = Vec::with_capacity(kernel.0 * kernel.1);
                        for ky in 0..kernel.0 {
                            for kx in 0..kernel.1 {
                                let iy = oy * strides.0 + ky;
                                let ix = ox * strides.1 + kx;
                                row.push(((iy * w + ix) * c + ch, 1));
                            }
                        }
                        terms.push(row);
                    }
                }
            }
            Ok(LinearMap {
                out_shape: vec![oh, ow, c],
                terms,
            })
        }
        OpKind::Flatten => {
            let len = input_shape.iter().product();
            Ok(LinearMap {
                out_shape: vec![len],
                terms: (0..len).map(|i| vec![(i, 1)]).collect(),
            })
        }
        OpKind::GateMask { gates } => {
            let len: usize = input_shape.iter().product();
            let channels = gates.len();
            let terms = (0..len)
                .map(|i| {
                    if gates[i % channels] == 1 {
                        vec![(i, 1)]
                    } else {
                        vec![]
                    }
                })
                .collect();
            Ok(LinearMap {
                out_shape: input_shape.to_vec(),
                terms,
            })
        }
        _ => Err(GraphError::BadAttribute("not a structural op".into())),
    }
}
