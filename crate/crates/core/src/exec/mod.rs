//! Compiles computation graphs into encrypted execution plans and runs them.
//!
//! The executor packs batches element-major: one ciphertext per tensor
//! element, with the batch dimension spread across the plaintext slots. No
//! slot rotations are ever needed; every graph op maps onto slot-wise
//! ciphertext arithmetic. When the active parameters carry several plaintext
//! moduli, the same plan runs once per modulus branch and the decrypted
//! residues are recombined with the CRT.
//!
//! Compilation is an abstract interpretation of the graph: elements whose
//! value is known at compile time (constants, gated-off channels, zero-weight
//! rows) never become ciphertext operations, and dead subexpressions are
//! removed transitively. Ciphertext-ciphertext multiplication happens only
//! where both factors are runtime values; weights always multiply in as
//! plaintexts.

pub mod tracer;
mod trial;

pub use tracer::{tracer_run, NoiseTrace};
pub use trial::{EncryptedTrialBackend, PREFILTER_GRACE_BITS};

use std::collections::{BTreeSet, HashMap};

use num_bigint::BigInt;
use rayon::prelude::*;
use thiserror::Error;

use crate::bfv::{
    decrypt, encrypt, he_add, he_add_plain, he_mul, he_mul_plain, he_negate, he_sub, Ciphertext,
    PublicKey, RelinKey, SecretKey,
};
use crate::bfv::BfvError;
use crate::encode::{encode_scalar, EncodeError, SlotEncoder};
use crate::graph::{BigTensor, Graph, GraphError, IntTensor, NodeId, OpKind};
use crate::modring::{signed_lift_big, CrtBasis, Modulus};
use crate::params::{EncryptionParams, ParamsError};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Bfv(#[from] BfvError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("batch of {got} examples exceeds the {max} slots supported by the parameters")]
    BatchTooLarge { got: usize, max: usize },
    #[error("batched tensor must have a leading batch dimension plus the element shape")]
    BadBatchShape,
    #[error("missing encrypted feed for placeholder node {0}")]
    MissingFeed(NodeId),
    #[error("feed for node {node} has element shape {got:?}, expected {want:?}")]
    FeedShape {
        node: NodeId,
        got: Vec<usize>,
        want: Vec<usize>,
    },
    #[error("expected {want} modulus branches, got {got}")]
    BranchCount { got: usize, want: usize },
    #[error("tensor carries modulus index {got}, expected {want}")]
    BranchIndex { got: usize, want: usize },
    #[error("tensors disagree on batch count")]
    BatchMismatch,
    #[error("constant folding overflowed 128-bit integers")]
    ConstOverflow,
    #[error("gate override for node {node}: expected {want} gates, got {got}")]
    GateOverride {
        node: NodeId,
        got: usize,
        want: usize,
    },
    #[error("node {0} does not take a gate override")]
    NotGated(NodeId),
    #[error("encrypted tensor bytes: {0}")]
    Serialization(String),
}

type Reg = usize;

/// One SSA-style ciphertext operation. Registers refer to earlier ops.
#[derive(Debug, Clone)]
pub(crate) enum PlanOp {
    /// Fetch one element ciphertext from a placeholder feed.
    Input { node: NodeId, elem: usize },
    /// Integer linear combination of registers plus a constant.
    Sum { terms: Vec<(Reg, i128)>, bias: i128 },
    /// Relinearized ciphertext product; `a == b` squares.
    CtMul { a: Reg, b: Reg },
}

/// Where an output element comes from.
#[derive(Debug, Clone)]
pub(crate) enum OutSrc {
    Reg(Reg),
    /// Value fully determined at compile time; materialized as a fresh
    /// encryption so outputs are always ciphertexts.
    Known(i128),
}

/// Homomorphic operation tally for one compiled plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCounts {
    /// Relinearized ciphertext-ciphertext products.
    pub ct_mul: usize,
    /// Ciphertext-plaintext products (weight magnitude at least 2).
    pub plain_mul: usize,
    /// Ciphertext additions, subtractions, and plaintext offsets.
    pub add: usize,
}

impl OpCounts {
    pub fn total(&self) -> usize {
        self.ct_mul + self.plain_mul + self.add
    }
}

/// A graph lowered to per-element ciphertext operations, shared by every
/// modulus branch. Constants are kept as exact integers and reduced per
/// branch at run time.
#[derive(Debug, Clone)]
pub struct ExecutionPlan {
    params: EncryptionParams,
    output_shape: Vec<usize>,
    /// Placeholder ids with their element shapes; feeds must cover these.
    placeholders: Vec<(NodeId, Vec<usize>)>,
    ops: Vec<PlanOp>,
    /// Op indices grouped by dependency depth; ops within a layer are
    /// independent of each other.
    layers: Vec<Vec<usize>>,
    /// Per register, the layer index after which no op reads it again.
    /// `usize::MAX` keeps plan outputs alive to the end.
    last_use: Vec<usize>,
    outputs: Vec<OutSrc>,
    skipped: BTreeSet<NodeId>,
    counts: OpCounts,
}

impl ExecutionPlan {
    pub fn params(&self) -> &EncryptionParams {
        &self.params
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn placeholders(&self) -> &[(NodeId, Vec<usize>)] {
        &self.placeholders
    }

    /// Nodes that contribute no ciphertext work: gated off, constant, or
    /// feeding only such nodes.
    pub fn skipped(&self) -> &BTreeSet<NodeId> {
        &self.skipped
    }

    pub fn counts(&self) -> OpCounts {
        self.counts
    }

    /// Number of compiled ciphertext operations in one branch.
    pub fn op_len(&self) -> usize {
        self.ops.len()
    }

    pub(crate) fn ops(&self) -> &[PlanOp] {
        &self.ops
    }

    pub(crate) fn outputs(&self) -> &[OutSrc] {
        &self.outputs
    }
}

/// Per-element compile-time value.
#[derive(Debug, Clone)]
enum ElemVal {
    Known(i128),
    Reg(Reg),
}

struct Compiler<'g> {
    graph: &'g Graph,
    ops: Vec<PlanOp>,
    elems: HashMap<NodeId, Vec<ElemVal>>,
}

impl<'g> Compiler<'g> {
    fn push(&mut self, op: PlanOp) -> ElemVal {
        let reg = self.ops.len();
        self.ops.push(op);
        ElemVal::Reg(reg)
    }

    /// Folds a linear combination of input elements into the cheapest
    /// representation: a known constant, an alias of an existing register, or
    /// a Sum op. Terms hitting known values fold into the bias; duplicate
    /// registers merge coefficients.
    fn fold_row(
        &mut self,
        row: &[(usize, i64)],
        src: &[ElemVal],
        extra_bias: i128,
    ) -> Result<ElemVal, ExecError> {
        let mut bias: i128 = extra_bias;
        let mut reg_coeffs: Vec<(Reg, i128)> = Vec::new();
        for &(idx, c) in row {
            if c == 0 {
                continue;
            }
            match src[idx] {
                ElemVal::Known(k) => {
                    let term = k.checked_mul(c as i128).ok_or(ExecError::ConstOverflow)?;
                    bias = bias.checked_add(term).ok_or(ExecError::ConstOverflow)?;
                }
                ElemVal::Reg(r) => match reg_coeffs.iter_mut().find(|(reg, _)| *reg == r) {
                    Some((_, acc)) => {
                        *acc = acc.checked_add(c as i128).ok_or(ExecError::ConstOverflow)?
                    }
                    None => reg_coeffs.push((r, c as i128)),
                },
            }
        }
        reg_coeffs.retain(|&(_, c)| c != 0);
        if reg_coeffs.is_empty() {
            return Ok(ElemVal::Known(bias));
        }
        if reg_coeffs.len() == 1 && reg_coeffs[0].1 == 1 && bias == 0 {
            return Ok(ElemVal::Reg(reg_coeffs[0].0));
        }
        Ok(self.push(PlanOp::Sum {
            terms: reg_coeffs,
            bias,
        }))
    }

    fn binary_elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        cb: i64,
    ) -> Result<Vec<ElemVal>, ExecError> {
        let len = self.elems[&a].len();
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            let (va, vb) = (self.elems[&a][i].clone(), self.elems[&b][i].clone());
            out.push(self.fold_row(&[(0, 1), (1, cb)], &[va, vb], 0)?);
        }
        Ok(out)
    }

    fn mul_elems(&mut self, a: NodeId, b: NodeId) -> Result<Vec<ElemVal>, ExecError> {
        let len = self.elems[&a].len();
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            let (va, vb) = (self.elems[&a][i].clone(), self.elems[&b][i].clone());
            out.push(match (va, vb) {
                (ElemVal::Known(x), ElemVal::Known(y)) => {
                    ElemVal::Known(x.checked_mul(y).ok_or(ExecError::ConstOverflow)?)
                }
                (ElemVal::Known(k), ElemVal::Reg(r)) | (ElemVal::Reg(r), ElemVal::Known(k)) => {
                    match k {
                        0 => ElemVal::Known(0),
                        1 => ElemVal::Reg(r),
                        c => self.push(PlanOp::Sum {
                            terms: vec![(r, c)],
                            bias: 0,
                        }),
                    }
                }
                (ElemVal::Reg(ra), ElemVal::Reg(rb)) => self.push(PlanOp::CtMul { a: ra, b: rb }),
            });
        }
        Ok(out)
    }
}

/// Builds the gate rows for an override: channel gate 1 keeps the element,
/// gate 0 drops it.
fn gate_rows(len: usize, channels: usize, gates: &[u8]) -> Vec<Vec<(usize, i64)>> {
    (0..len)
        .map(|i| {
            if gates[i % channels] != 0 {
                vec![(i, 1)]
            } else {
                Vec::new()
            }
        })
        .collect()
}

/// Lowers a graph to an execution plan under the given parameters.
///
/// `gates`, when present, overrides the gate values stored in the graph's
/// gate-mask nodes (keyed by node id, one byte per channel, nonzero = keep).
/// Elements that fold to compile-time constants produce no ciphertext ops;
/// operations feeding only dead elements are removed transitively and their
/// nodes reported in the skip set.
pub fn compile(
    graph: &Graph,
    params: &EncryptionParams,
    gates: Option<&HashMap<NodeId, Vec<u8>>>,
) -> Result<ExecutionPlan, ExecError> {
    params.validate()?;
    if let Some(overrides) = gates {
        for (&id, vals) in overrides {
            let node = graph.node(id)?;
            let OpKind::GateMask { gates: stored } = &node.op else {
                return Err(ExecError::NotGated(id));
            };
            if vals.len() != stored.len() {
                return Err(ExecError::GateOverride {
                    node: id,
                    got: vals.len(),
                    want: stored.len(),
                });
            }
        }
    }

    let ancestors = graph.ancestors_of_output();
    let mut c = Compiler {
        graph,
        ops: Vec::new(),
        elems: HashMap::new(),
    };
    let mut placeholders = Vec::new();

    for &id in &ancestors {
        let node = c.graph.node(id)?;
        let len: usize = node.shape.iter().product();
        let vals = match &node.op {
            OpKind::Placeholder { .. } => {
                placeholders.push((id, node.shape.clone()));
                (0..len)
                    .map(|e| c.push(PlanOp::Input { node: id, elem: e }))
                    .collect()
            }
            OpKind::Const { value } => value
                .data()
                .iter()
                .map(|&v| ElemVal::Known(v as i128))
                .collect(),
            OpKind::Add => c.binary_elementwise(node.inputs[0], node.inputs[1], 1)?,
            OpKind::Sub => c.binary_elementwise(node.inputs[0], node.inputs[1], -1)?,
            OpKind::Neg => {
                let a = node.inputs[0];
                let mut out = Vec::with_capacity(len);
                for i in 0..len {
                    let v = c.elems[&a][i].clone();
                    out.push(c.fold_row(&[(0, -1)], &[v], 0)?);
                }
                out
            }
            OpKind::Mul => c.mul_elems(node.inputs[0], node.inputs[1])?,
            OpKind::Square => {
                let a = node.inputs[0];
                let mut out = Vec::with_capacity(len);
                for i in 0..len {
                    out.push(match c.elems[&a][i].clone() {
                        ElemVal::Known(k) => {
                            ElemVal::Known(k.checked_mul(k).ok_or(ExecError::ConstOverflow)?)
                        }
                        ElemVal::Reg(r) => c.push(PlanOp::CtMul { a: r, b: r }),
                    });
                }
                out
            }
            OpKind::MatMul { .. }
            | OpKind::Conv2D { .. }
            | OpKind::SumPool { .. }
            | OpKind::Flatten
            | OpKind::GateMask { .. } => {
                let input = node.inputs[0];
                let src = c.elems[&input].clone();
                let rows = match (&node.op, gates.and_then(|g| g.get(&id))) {
                    (OpKind::GateMask { gates: stored }, Some(override_gates)) => {
                        gate_rows(src.len(), stored.len(), override_gates)
                    }
                    _ => {
                        let lm = c
                            .graph
                            .linear_map(id)?
                            .expect("structural ops always have a linear map");
                        lm.terms
                    }
                };
                let mut out = Vec::with_capacity(rows.len());
                for row in &rows {
                    out.push(c.fold_row(row, &src, 0)?);
                }
                out
            }
        };
        c.elems.insert(id, vals);
    }

    let output_elems = c.elems[&graph.output()].clone();
    let raw_outputs: Vec<OutSrc> = output_elems
        .iter()
        .map(|v| match v {
            ElemVal::Known(k) => OutSrc::Known(*k),
            ElemVal::Reg(r) => OutSrc::Reg(*r),
        })
        .collect();

    // Liveness from the outputs back through register dependencies.
    let mut live = vec![false; c.ops.len()];
    let mut stack: Vec<Reg> = raw_outputs
        .iter()
        .filter_map(|o| match o {
            OutSrc::Reg(r) => Some(*r),
            OutSrc::Known(_) => None,
        })
        .collect();
    while let Some(r) = stack.pop() {
        if live[r] {
            continue;
        }
        live[r] = true;
        match &c.ops[r] {
            PlanOp::Input { .. } => {}
            PlanOp::Sum { terms, .. } => stack.extend(terms.iter().map(|&(src, _)| src)),
            PlanOp::CtMul { a, b } => {
                stack.push(*a);
                stack.push(*b);
            }
        }
    }

    let mut remap = vec![usize::MAX; c.ops.len()];
    let mut ops = Vec::new();
    for (i, op) in c.ops.iter().enumerate() {
        if !live[i] {
            continue;
        }
        remap[i] = ops.len();
        ops.push(match op {
            PlanOp::Input { node, elem } => PlanOp::Input {
                node: *node,
                elem: *elem,
            },
            PlanOp::Sum { terms, bias } => PlanOp::Sum {
                terms: terms.iter().map(|&(r, co)| (remap[r], co)).collect(),
                bias: *bias,
            },
            PlanOp::CtMul { a, b } => PlanOp::CtMul {
                a: remap[*a],
                b: remap[*b],
            },
        });
    }
    let outputs: Vec<OutSrc> = raw_outputs
        .into_iter()
        .map(|o| match o {
            OutSrc::Reg(r) => OutSrc::Reg(remap[r]),
            k => k,
        })
        .collect();

    // Dependency layers for parallel evaluation, then release points.
    let mut layer_of = vec![0usize; ops.len()];
    for (i, op) in ops.iter().enumerate() {
        layer_of[i] = match op {
            PlanOp::Input { .. } => 0,
            PlanOp::Sum { terms, .. } => {
                1 + terms.iter().map(|&(r, _)| layer_of[r]).max().unwrap_or(0)
            }
            PlanOp::CtMul { a, b } => 1 + layer_of[*a].max(layer_of[*b]),
        };
    }
    let depth = layer_of.iter().max().map_or(0, |&d| d + 1);
    let mut layers = vec![Vec::new(); depth];
    for (i, &l) in layer_of.iter().enumerate() {
        layers[l].push(i);
    }
    let mut last_use = vec![0usize; ops.len()];
    for (i, op) in ops.iter().enumerate() {
        let mut touch = |r: Reg| last_use[r] = last_use[r].max(layer_of[i]);
        match op {
            PlanOp::Input { .. } => {}
            PlanOp::Sum { terms, .. } => terms.iter().for_each(|&(r, _)| touch(r)),
            PlanOp::CtMul { a, b } => {
                touch(*a);
                touch(*b);
            }
        }
    }
    for o in &outputs {
        if let OutSrc::Reg(r) = o {
            last_use[*r] = usize::MAX;
        }
    }

    let mut counts = OpCounts::default();
    for op in &ops {
        match op {
            PlanOp::Input { .. } => {}
            PlanOp::Sum { terms, bias } => {
                counts.plain_mul += terms.iter().filter(|&&(_, co)| co.unsigned_abs() >= 2).count();
                counts.add += terms.len() - 1 + usize::from(*bias != 0);
            }
            PlanOp::CtMul { .. } => counts.ct_mul += 1,
        }
    }

    let mut skipped = BTreeSet::new();
    for &id in &ancestors {
        let node = c.graph.node(id)?;
        if matches!(node.op, OpKind::Placeholder { .. }) {
            continue;
        }
        let all_dead = c.elems[&id].iter().all(|v| match v {
            ElemVal::Known(_) => true,
            ElemVal::Reg(r) => !live[*r],
        });
        if all_dead {
            skipped.insert(id);
        }
    }

    Ok(ExecutionPlan {
        params: params.clone(),
        output_shape: graph.output_shape().to_vec(),
        placeholders,
        ops,
        layers,
        last_use,
        outputs,
        skipped,
        counts,
    })
}

/// Centered representative of `v` mod odd `t`, in [-(t-1)/2, (t-1)/2].
pub(crate) fn centered(v: i128, t: u64) -> i64 {
    let m = t as i128;
    let mut r = v % m;
    if r < 0 {
        r += m;
    }
    if r > (m - 1) / 2 {
        r -= m;
    }
    r as i64
}

/// A batch of values for one tensor under one plaintext modulus: one
/// ciphertext per element, batch examples in the slots.
#[derive(Debug, Clone)]
pub struct EncryptedTensor {
    shape: Vec<usize>,
    batch_count: usize,
    modulus_index: usize,
    cts: Vec<Ciphertext>,
}

impl EncryptedTensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn batch_count(&self) -> usize {
        self.batch_count
    }

    pub fn modulus_index(&self) -> usize {
        self.modulus_index
    }

    pub fn ciphertexts(&self) -> &[Ciphertext] {
        &self.cts
    }
}

/// Feeds for one modulus branch: placeholder node id to its encrypted batch.
pub type EncryptedFeeds = HashMap<NodeId, EncryptedTensor>;

/// Key material the evaluating party holds: enough to run a plan, not enough
/// to decrypt.
#[derive(Clone)]
pub struct EvalKeys {
    pub public: PublicKey,
    pub relin: RelinKey,
}

/// Encrypts a batched integer tensor (leading dimension = examples) under
/// every plaintext modulus of `params`. Values are reduced into the centered
/// range of each modulus; short batches are zero-padded to the slot count.
pub fn encrypt_batch(
    pk: &PublicKey,
    batch: &IntTensor,
    params: &EncryptionParams,
) -> Result<Vec<EncryptedTensor>, ExecError> {
    if batch.shape().len() < 2 {
        return Err(ExecError::BadBatchShape);
    }
    let b = batch.shape()[0];
    let n = params.degree_n;
    if b > n {
        return Err(ExecError::BatchTooLarge { got: b, max: n });
    }
    let elem_shape: Vec<usize> = batch.shape()[1..].to_vec();
    let elem_count: usize = elem_shape.iter().product();

    params
        .plain_moduli
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let pk_t = pk.rebind_plain_modulus(t)?;
            let enc = SlotEncoder::new(n, Modulus::new(t).map_err(BfvError::from)?)?;
            let cts = (0..elem_count)
                .into_par_iter()
                .map(|e| {
                    let slots: Vec<i64> = (0..b)
                        .map(|ex| centered(batch.data()[ex * elem_count + e] as i128, t))
                        .collect();
                    Ok(encrypt(&pk_t, &enc.encode(&slots)?)?)
                })
                .collect::<Result<Vec<_>, ExecError>>()?;
            Ok(EncryptedTensor {
                shape: elem_shape.clone(),
                batch_count: b,
                modulus_index: i,
                cts,
            })
        })
        .collect()
}

struct BranchCtx {
    t: u64,
    encoder: SlotEncoder,
    public: PublicKey,
    relin: RelinKey,
    degree_n: usize,
}

impl BranchCtx {
    fn new(params: &EncryptionParams, keys: &EvalKeys, branch: usize) -> Result<Self, ExecError> {
        let t = params.plain_moduli[branch];
        Ok(BranchCtx {
            t,
            encoder: SlotEncoder::new(params.degree_n, Modulus::new(t).map_err(BfvError::from)?)?,
            public: keys.public.rebind_plain_modulus(t)?,
            relin: keys.relin.rebind_plain_modulus(t)?,
            degree_n: params.degree_n,
        })
    }

    fn scalar_pt(&self, v: i64) -> Result<crate::bfv::Plaintext, ExecError> {
        Ok(encode_scalar(v, self.encoder.plain_modulus(), self.degree_n)?)
    }

    /// Fresh encryption of the same value in every live slot.
    fn encrypt_fill(&self, v: i64, batch_count: usize) -> Result<Ciphertext, ExecError> {
        let slots = vec![v; batch_count];
        Ok(encrypt(&self.public, &self.encoder.encode(&slots)?)?)
    }

    fn eval_sum(
        &self,
        terms: &[(Reg, i128)],
        bias: i128,
        regs: &[Option<Ciphertext>],
        batch_count: usize,
    ) -> Result<Ciphertext, ExecError> {
        let mut acc: Option<Ciphertext> = None;
        for &(r, coeff) in terms {
            let src = regs[r].as_ref().expect("dependency evaluated earlier");
            let c = centered(coeff, self.t);
            let next = match (acc.take(), c) {
                (_, 0) => {
                    // Coefficient vanished in this branch's modulus.
                    acc = None;
                    continue;
                }
                (None, 1) => src.clone(),
                (None, -1) => he_negate(src)?,
                (None, c) => he_mul_plain(src, &self.scalar_pt(c)?)?,
                (Some(a), 1) => he_add(&a, src)?,
                (Some(a), -1) => he_sub(&a, src)?,
                (Some(a), c) => he_add(&a, &he_mul_plain(src, &self.scalar_pt(c)?)?)?,
            };
            acc = Some(next);
        }
        let b = centered(bias, self.t);
        match (acc, b) {
            (Some(a), 0) => Ok(a),
            (Some(a), b) => Ok(he_add_plain(&a, &self.scalar_pt(b)?)?),
            // Every term vanished mod t: the result is a constant.
            (None, b) => self.encrypt_fill(b, batch_count),
        }
    }
}

fn run_branch(
    plan: &ExecutionPlan,
    feeds: &EncryptedFeeds,
    ctx: &BranchCtx,
    branch: usize,
    batch_count: usize,
) -> Result<EncryptedTensor, ExecError> {
    let mut regs: Vec<Option<Ciphertext>> = vec![None; plan.ops.len()];
    for (layer_idx, layer) in plan.layers.iter().enumerate() {
        let results: Vec<(usize, Ciphertext)> = layer
            .par_iter()
            .map(|&i| {
                let ct = match &plan.ops[i] {
                    PlanOp::Input { node, elem } => feeds[node].cts[*elem].clone(),
                    PlanOp::Sum { terms, bias } => {
                        ctx.eval_sum(terms, *bias, &regs, batch_count)?
                    }
                    PlanOp::CtMul { a, b } => {
                        let ca = regs[*a].as_ref().expect("dependency evaluated earlier");
                        let cb = regs[*b].as_ref().expect("dependency evaluated earlier");
                        he_mul(ca, cb, &ctx.relin)?
                    }
                };
                Ok((i, ct))
            })
            .collect::<Result<Vec<_>, ExecError>>()?;
        for (i, ct) in results {
            regs[i] = Some(ct);
        }
        for (r, &last) in plan.last_use.iter().enumerate() {
            if last == layer_idx && regs[r].is_some() {
                regs[r] = None;
            }
        }
    }

    let cts = plan
        .outputs
        .par_iter()
        .map(|o| match o {
            OutSrc::Reg(r) => Ok(regs[*r].clone().expect("plan outputs stay alive")),
            OutSrc::Known(k) => ctx.encrypt_fill(centered(*k, ctx.t), batch_count),
        })
        .collect::<Result<Vec<_>, ExecError>>()?;
    Ok(EncryptedTensor {
        shape: plan.output_shape.clone(),
        batch_count,
        modulus_index: branch,
        cts,
    })
}

/// Checks one branch's feeds against the plan and returns the batch count.
fn validate_feeds(
    plan: &ExecutionPlan,
    feeds: &EncryptedFeeds,
    branch: usize,
) -> Result<usize, ExecError> {
    let mut batch: Option<usize> = None;
    for (id, shape) in &plan.placeholders {
        let tensor = feeds.get(id).ok_or(ExecError::MissingFeed(*id))?;
        if tensor.shape != *shape {
            return Err(ExecError::FeedShape {
                node: *id,
                got: tensor.shape.clone(),
                want: shape.clone(),
            });
        }
        if tensor.modulus_index != branch {
            return Err(ExecError::BranchIndex {
                got: tensor.modulus_index,
                want: branch,
            });
        }
        match batch {
            None => batch = Some(tensor.batch_count),
            Some(b) if b != tensor.batch_count => return Err(ExecError::BatchMismatch),
            Some(_) => {}
        }
    }
    // A plan with no placeholders still produces constant outputs for a
    // single-example batch.
    Ok(batch.unwrap_or(1))
}

/// Runs the plan on encrypted inputs, one feed map per modulus branch, and
/// returns one encrypted output tensor per branch. Branches and independent
/// elements evaluate in parallel.
pub fn run(
    plan: &ExecutionPlan,
    feeds: &[EncryptedFeeds],
    keys: &EvalKeys,
) -> Result<Vec<EncryptedTensor>, ExecError> {
    let k = plan.params.plain_moduli.len();
    if feeds.len() != k {
        return Err(ExecError::BranchCount {
            got: feeds.len(),
            want: k,
        });
    }
    let batches = feeds
        .iter()
        .enumerate()
        .map(|(i, f)| validate_feeds(plan, f, i))
        .collect::<Result<Vec<_>, _>>()?;
    if batches.windows(2).any(|w| w[0] != w[1]) {
        return Err(ExecError::BatchMismatch);
    }
    let batch_count = batches.first().copied().unwrap_or(1);

    (0..k)
        .into_par_iter()
        .map(|i| {
            let ctx = BranchCtx::new(&plan.params, keys, i)?;
            run_branch(plan, &feeds[i], &ctx, i, batch_count)
        })
        .collect()
}

/// Decrypts one output tensor per branch and recombines the residues into
/// signed integers mod the product of the plaintext moduli. The result has a
/// leading batch dimension; padding slots are discarded.
pub fn decrypt_recombine(
    sk: &SecretKey,
    outputs: &[EncryptedTensor],
    basis: &CrtBasis,
) -> Result<BigTensor, ExecError> {
    if outputs.is_empty() || outputs.len() != basis.len() {
        return Err(ExecError::BranchCount {
            got: outputs.len(),
            want: basis.len(),
        });
    }
    let mut by_branch: Vec<Option<&EncryptedTensor>> = vec![None; outputs.len()];
    for tensor in outputs {
        let idx = tensor.modulus_index;
        if idx >= by_branch.len() || by_branch[idx].is_some() {
            return Err(ExecError::BranchIndex {
                got: idx,
                want: by_branch.iter().position(Option::is_none).unwrap_or(0),
            });
        }
        by_branch[idx] = Some(tensor);
    }
    let branches: Vec<&EncryptedTensor> = by_branch.into_iter().map(Option::unwrap).collect();
    let first = branches[0];
    let batch_count = first.batch_count;
    for t in &branches[1..] {
        if t.shape != first.shape || t.batch_count != batch_count {
            return Err(ExecError::BatchMismatch);
        }
    }

    // Per branch: decode every element to its slot residues mod t_i.
    let decoded: Vec<Vec<Vec<u64>>> = branches
        .par_iter()
        .enumerate()
        .map(|(i, tensor)| {
            let t = basis.moduli()[i].value();
            let sk_t = sk.rebind_plain_modulus(t)?;
            let n = sk_t.params().degree_n();
            let enc = SlotEncoder::new(n, basis.moduli()[i])?;
            tensor
                .cts
                .par_iter()
                .map(|ct| {
                    let pt = decrypt(&sk_t, ct)?;
                    let slots = enc.decode(&pt)?;
                    Ok(slots[..batch_count]
                        .iter()
                        .map(|&v| v.rem_euclid(t as i64) as u64)
                        .collect())
                })
                .collect::<Result<Vec<Vec<u64>>, ExecError>>()
        })
        .collect::<Result<_, _>>()?;

    let elem_count = first.cts.len();
    let product = basis.product();
    let mut data = Vec::with_capacity(batch_count * elem_count);
    let mut residues = vec![0u64; branches.len()];
    for ex in 0..batch_count {
        for e in 0..elem_count {
            for (i, branch) in decoded.iter().enumerate() {
                residues[i] = branch[e][ex];
            }
            let combined = basis.combine(&residues).map_err(BfvError::from)?;
            data.push(signed_lift_big(&combined, product));
        }
    }
    let mut shape = vec![batch_count];
    shape.extend_from_slice(&first.shape);
    Ok(BigTensor::new(shape, data)?)
}

const TENSOR_MAGIC: &[u8; 4] = b"SLTN";
const TENSOR_VERSION: u16 = 1;

impl EncryptedTensor {
    /// Container layout: magic, version, rank, dims, batch count, modulus
    /// index, then length-prefixed ciphertext blobs. Little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(TENSOR_MAGIC);
        buf.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        buf.push(self.shape.len() as u8);
        for &d in &self.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        buf.extend_from_slice(&(self.batch_count as u64).to_le_bytes());
        buf.extend_from_slice(&(self.modulus_index as u32).to_le_bytes());
        buf.extend_from_slice(&(self.cts.len() as u64).to_le_bytes());
        for ct in &self.cts {
            let blob = ct.to_bytes();
            buf.extend_from_slice(&(blob.len() as u64).to_le_bytes());
            buf.extend_from_slice(&blob);
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ExecError> {
        let mut pos = 0usize;
        let mut take = |len: usize| -> Result<&[u8], ExecError> {
            let end = pos
                .checked_add(len)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| ExecError::Serialization("unexpected end of data".into()))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(4)? != TENSOR_MAGIC {
            return Err(ExecError::Serialization("bad magic".into()));
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != TENSOR_VERSION {
            return Err(ExecError::Serialization(format!(
                "unsupported version {version}"
            )));
        }
        let rank = take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
        }
        let batch_count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let modulus_index = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let ct_count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let elem_count: usize = shape.iter().product();
        if rank == 0 || ct_count != elem_count || batch_count == 0 {
            return Err(ExecError::Serialization(
                "inconsistent tensor header".into(),
            ));
        }
        let mut cts = Vec::with_capacity(ct_count);
        for _ in 0..ct_count {
            let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            let blob = take(len)?;
            cts.push(Ciphertext::from_bytes(blob)?);
        }
        if pos != bytes.len() {
            return Err(ExecError::Serialization("trailing bytes".into()));
        }
        let n = cts[0].params().degree_n();
        if batch_count > n {
            return Err(ExecError::Serialization(
                "batch count exceeds slot count".into(),
            ));
        }
        Ok(EncryptedTensor {
            shape,
            batch_count,
            modulus_index,
            cts,
        })
    }
}

/// Convenience for tests and the trial backend: stacks single-example feeds
/// into the batched layout `encrypt_batch` expects.
pub fn stack_examples(examples: &[&IntTensor]) -> Result<IntTensor, ExecError> {
    let first = examples.first().ok_or(ExecError::BatchMismatch)?;
    let mut shape = vec![examples.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(examples.len() * first.len());
    for ex in examples {
        if ex.shape() != first.shape() {
            return Err(ExecError::BatchMismatch);
        }
        data.extend_from_slice(ex.data());
    }
    Ok(IntTensor::new(shape, data)?)
}

/// Signed output of one example from a recombined batch result.
pub fn example_slice(result: &BigTensor, example: usize) -> &[BigInt] {
    let elem_count: usize = result.shape()[1..].iter().product();
    &result.data()[example * elem_count..(example + 1) * elem_count]
}

#[cfg(test)]
mod tests;
