//! Exact plaintext evaluation of graphs over arbitrary-precision integers.
//!
//! This is the reference semantics the encrypted executor must reproduce:
//! either over the plain integers, or modulo a plaintext modulus with the
//! output lifted back to the centered signed range.

use std::collections::HashMap;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::Zero;

use super::{Graph, GraphError, IntTensor, Interval, NodeId, OpKind};

/// Placeholder bindings for one evaluation.
pub type Feeds = HashMap<NodeId, IntTensor>;

/// Arbitrary-precision tensor produced by evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BigTensor {
    shape: Vec<usize>,
    data: Vec<BigInt>,
}

impl BigTensor {
    pub fn new(shape: Vec<usize>, data: Vec<BigInt>) -> Result<Self, GraphError> {
        let want: usize = shape.iter().product();
        if shape.is_empty() || want != data.len() {
            let got = data.len();
            return Err(GraphError::ShapeDataMismatch { shape, want, got });
        }
        Ok(BigTensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[BigInt] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

fn reduce(v: &mut BigInt, modulus: Option<&BigUint>) {
    if let Some(m) = modulus {
        let m = BigInt::from(m.clone());
        *v = v.mod_floor(&m);
    }
}

/// Centers a residue in [0, m) into [-floor(m/2), ceil(m/2) - 1].
fn center(v: BigInt, m: &BigUint) -> BigInt {
    let m = BigInt::from(m.clone());
    let half = &m - (&m / 2);
    if v >= half {
        v - m
    } else {
        v
    }
}

impl Graph {
    /// Evaluates the output node over exact integers. With a modulus, every
    /// intermediate is reduced and the output is lifted to the centered
    /// signed range, matching what decryption of an encrypted run produces.
    ///
    /// Feeds outside a placeholder's declared domain are legal inputs whose
    /// interval guarantees no longer apply; they log a warning.
    pub fn eval_plain(
        &self,
        feeds: &Feeds,
        modulus: Option<&BigUint>,
    ) -> Result<BigTensor, GraphError> {
        let mut values: Vec<Option<BigTensor>> = vec![None; self.nodes().len()];
        for id in self.ancestors_of_output() {
            let node = self.node(id)?;
            let value = match &node.op {
                OpKind::Placeholder { .. } => {
                    let feed = feeds.get(&id).ok_or(GraphError::MissingFeed(id))?;
                    if feed.shape() != node.shape.as_slice() {
                        return Err(GraphError::FeedShape {
                            node: id,
                            want: node.shape.clone(),
                            got: feed.shape().to_vec(),
                        });
                    }
                    warn_on_domain_violation(id, feed, &node.domain);
                    let mut data: Vec<BigInt> =
                        feed.data().iter().map(|&v| BigInt::from(v)).collect();
                    for v in &mut data {
                        reduce(v, modulus);
                    }
                    BigTensor {
                        shape: node.shape.clone(),
                        data,
                    }
                }
                OpKind::Const { value } => {
                    let mut data: Vec<BigInt> =
                        value.data().iter().map(|&v| BigInt::from(v)).collect();
                    for v in &mut data {
                        reduce(v, modulus);
                    }
                    BigTensor {
                        shape: node.shape.clone(),
                        data,
                    }
                }
                OpKind::Add | OpKind::Sub | OpKind::Mul => {
                    let a = values[node.inputs[0]].as_ref().expect("topological order");
                    let b = values[node.inputs[1]].as_ref().expect("topological order");
                    let data = a
                        .data
                        .iter()
                        .zip(&b.data)
                        .map(|(x, y)| {
                            let mut v = match node.op {
                                OpKind::Add => x + y,
                                OpKind::Sub => x - y,
                                OpKind::Mul => x * y,
                                _ => unreachable!(),
                            };
                            reduce(&mut v, modulus);
                            v
                        })
                        .collect();
                    BigTensor {
                        shape: node.shape.clone(),
                        data,
                    }
                }
                OpKind::Neg => {
                    let a = values[node.inputs[0]].as_ref().expect("topological order");
                    let data = a
                        .data
                        .iter()
                        .map(|x| {
                            let mut v = -x;
                            reduce(&mut v, modulus);
                            v
                        })
                        .collect();
                    BigTensor {
                        shape: node.shape.clone(),
                        data,
                    }
                }
                OpKind::Square => {
                    let a = values[node.inputs[0]].as_ref().expect("topological order");
                    let data = a
                        .data
                        .iter()
                        .map(|x| {
                            let mut v = x * x;
                            reduce(&mut v, modulus);
                            v
                        })
                        .collect();
                    BigTensor {
                        shape: node.shape.clone(),
                        data,
                    }
                }
                OpKind::MatMul { .. }
                | OpKind::Conv2D { .. }
                | OpKind::SumPool { .. }
                | OpKind::Flatten
                | OpKind::GateMask { .. } => {
                    let map = self.linear_map(id)?.expect("structural op");
                    let a = values[node.inputs[0]].as_ref().expect("topological order");
                    let data = map
                        .terms
                        .iter()
                        .map(|row| {
                            let mut acc = BigInt::zero();
                            for &(src, w) in row {
                                acc += &a.data[src] * w;
                            }
                            reduce(&mut acc, modulus);
                            acc
                        })
                        .collect();
                    BigTensor {
                        shape: node.shape.clone(),
                        data,
                    }
                }
            };
            values[id] = Some(value);
        }
        let mut out = values[self.output()].take().expect("output was evaluated");
        if let Some(m) = modulus {
            for v in &mut out.data {
                *v = center(std::mem::take(v), m);
            }
        }
        Ok(out)
    }

    /// Runs a calibration batch through the graph and records the tightest
    /// interval covering every output element seen. Returns the interval and
    /// stores it on the graph for parameter sizing.
    pub fn record_output_domain(&mut self, batch: &[Feeds]) -> Result<Interval, GraphError> {
        if batch.is_empty() {
            return Err(GraphError::EmptyBatch);
        }
        let mut lo: Option<BigInt> = None;
        let mut hi: Option<BigInt> = None;
        for feeds in batch {
            let out = self.eval_plain(feeds, None)?;
            for v in out.data() {
                lo = Some(match lo {
                    Some(cur) => cur.min(v.clone()),
                    None => v.clone(),
                });
                hi = Some(match hi {
                    Some(cur) => cur.max(v.clone()),
                    None => v.clone(),
                });
            }
        }
        let interval = Interval::new(lo.expect("batch is non-empty"), hi.expect("batch is non-empty"))?;
        self.set_recorded_output_domain(interval.clone());
        Ok(interval)
    }
}

fn warn_on_domain_violation(id: NodeId, feed: &IntTensor, domain: &Interval) {
    for &v in feed.data() {
        let v = BigInt::from(v);
        if !domain.contains(&v) {
            log::warn!(
                "feed for placeholder {id} contains {v}, outside its declared domain \
                 [{}, {}]; interval guarantees no longer hold",
                domain.lo(),
                domain.hi()
            );
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;

    fn feeds_of(pairs: &[(NodeId, IntTensor)]) -> Feeds {
        pairs.iter().cloned().collect()
    }

    #[test]
    fn identity_graph_returns_the_feed() {
        let mut b = GraphBuilder::new();
        let x = b.placeholder(&[3], 5, true).unwrap();
        let g = b.build(x).unwrap();
        let feed = IntTensor::new(vec![3], vec![-5, 0, 5]).unwrap();
        let out = g.eval_plain(&feeds_of(&[(x, feed)]), None).unwrap();
        assert_eq!(out.shape(), &[3]);
        let got: Vec<i64> = out.data().iter().map(|v| i64::try_from(v).unwrap()).collect();
        assert_eq!(got, vec![-5, 0, 5]);
    }

    #[test]
    fn dense_layer_matches_hand_computation() {
        let mut b = GraphBuilder::new();
        let x = b.placeholder(&[2], 1, false).unwrap();
        let w = IntTensor::new(vec![2, 2], vec![1, 2, 3, 4]).unwrap();
        let y = b.matmul(x, w).unwrap();
        let g = b.build(y).unwrap();
        let out = g
            .eval_plain(
                &feeds_of(&[(x, IntTensor::new(vec![2], vec![1, 1]).unwrap())]),
                None,
            )
            .unwrap();
        let got: Vec<i64> = out.data().iter().map(|v| i64::try_from(v).unwrap()).collect();
        assert_eq!(got, vec![4, 6]);
    }

    #[test]
    fn constant_only_graph_needs_no_feeds() {
        let mut b = GraphBuilder::new();
        let c = b.constant(IntTensor::scalar(5));
        let g = b.build(c).unwrap();
        let out = g.eval_plain(&Feeds::new(), None).unwrap();
        assert_eq!(i64::try_from(&out.data()[0]).unwrap(), 5);
    }

    #[test]
    fn elementwise_ops_compose() {
        let mut b = GraphBuilder::new();
        let x = b.placeholder(&[2], 10, true).unwrap();
        let y = b.placeholder(&[2], 10, true).unwrap();
        let s = b.sub(x, y).unwrap();
        let n = b.neg(s).unwrap();
        let m = b.mul(n, x).unwrap();
        let q = b.square(m).unwrap();
        let g = b.build(q).unwrap();
        let out = g
            .eval_plain(
                &feeds_of(&[
                    (x, IntTensor::new(vec![2], vec![3, -2]).unwrap()),
                    (y, IntTensor::new(vec![2], vec![1, 4]).unwrap()),
                ]),
                None,
            )
            .unwrap();
        // x-y = [2,-6]; neg = [-2,6]; *x = [-6,-12]; squared = [36,144].
        let got: Vec<i64> = out.data().iter().map(|v| i64::try_from(v).unwrap()).collect();
        assert_eq!(got, vec![36, 144]);
    }

    #[test]
    fn conv_pool_flatten_pipeline_matches_direct_arithmetic() {
        let mut b = GraphBuilder::new();
        let x = b.placeholder(&[4, 4, 1], 9, false).unwrap();
        let kernel = IntTensor::new(vec![2, 2, 1, 1], vec![1, 0, 0, 1]).unwrap();
        let c = b.conv2d(x, kernel, (1, 1)).unwrap();
        let p = b.sum_pool(c, (3, 3), (1, 1)).unwrap();
        let f = b.flatten(p).unwrap();
        let g = b.build(f).unwrap();
        let img: Vec<i64> = (1..=16).collect();
        let out = g
            .eval_plain(
                &feeds_of(&[(x, IntTensor::new(vec![4, 4, 1], img.clone()).unwrap())]),
                None,
            )
            .unwrap();
        // Trace diagonal-sum conv on the 4x4 ramp, then one 3x3 sum window.
        let mut conv = vec![0i64; 9];
        for oy in 0..3 {
            for ox in 0..3 {
                conv[oy * 3 + ox] = img[oy * 4 + ox] + img[(oy + 1) * 4 + ox + 1];
            }
        }
        let want: i64 = conv.iter().sum();
        assert_eq!(out.shape(), &[1]);
        assert_eq!(i64::try_from(&out.data()[0]).unwrap(), want);
    }

    #[test]
    fn gate_mask_zeroes_closed_channels() {
        let mut b = GraphBuilder::new();
        let x = b.placeholder(&[1, 2, 2], 9, false).unwrap();
        let gated = b.gate_mask(x, vec![0, 1]).unwrap();
        let g = b.build(gated).unwrap();
        let out = g
            .eval_plain(
                &feeds_of(&[(x, IntTensor::new(vec![1, 2, 2], vec![5, 6, 7, 8]).unwrap())]),
                None,
            )
            .unwrap();
        let got: Vec<i64> = out.data().iter().map(|v| i64::try_from(v).unwrap()).collect();
        assert_eq!(got, vec![0, 6, 0, 8]);
    }

    #[test]
    fn missing_and_misshapen_feeds_are_rejected() {
        let mut b = GraphBuilder::new();
        let x = b.placeholder(&[2], 1, false).unwrap();
        let y = b.neg(x).unwrap();
        let g = b.build(y).unwrap();
        assert!(matches!(
            g.eval_plain(&Feeds::new(), None),
            Err(GraphError::MissingFeed(_))
        ));
        let bad = IntTensor::new(vec![3], vec![1, 1, 1]).unwrap();
        assert!(matches!(
            g.eval_plain(&feeds_of(&[(x, bad)]), None),
            Err(GraphError::FeedShape { .. })
        ));
    }

    #[test]
    fn modular_evaluation_centers_the_output() {
        let mut b = GraphBuilder::new();
        let x = b.placeholder(&[1], 100, true).unwrap();
        let sq = b.square(x).unwrap();
        let g = b.build(sq).unwrap();
        let m = BigUint::from(257u32);
        // 20^2 = 400 = 143 mod 257, centered to 143 - 257 = -114.
        let out = g
            .eval_plain(
                &feeds_of(&[(x, IntTensor::new(vec![1], vec![20]).unwrap())]),
                Some(&m),
            )
            .unwrap();
        assert_eq!(i64::try_from(&out.data()[0]).unwrap(), -114);
    }

    #[test]
    fn modular_and_exact_evaluation_agree_when_the_output_fits() {
        let mut b = GraphBuilder::new();
        let x = b.placeholder(&[2], 6, true).unwrap();
        let sq = b.square(x).unwrap();
        let w = IntTensor::new(vec![2, 1], vec![3, -2]).unwrap();
        let y = b.matmul(sq, w).unwrap();
        let g = b.build(y).unwrap();
        let m = BigUint::from(40961u64);
        for a in -6i64..=6 {
            for c in -6i64..=6 {
                let feeds = feeds_of(&[(x, IntTensor::new(vec![2], vec![a, c]).unwrap())]);
                let exact = g.eval_plain(&feeds, None).unwrap();
                let modular = g.eval_plain(&feeds, Some(&m)).unwrap();
                assert_eq!(exact, modular, "inputs ({a}, {c})");
            }
        }
    }

    #[test]
    fn negative_intermediates_reduce_correctly_mod_m() {
        let mut b = GraphBuilder::new();
        let x = b.placeholder(&[1], 50, true).unwrap();
        let n = b.neg(x).unwrap();
        let c = b.constant(IntTensor::scalar(3));
        let y = b.mul(n, c).unwrap();
        let g = b.build(y).unwrap();
        let m = BigUint::from(97u32);
        // -40*3 = -120 = 74 mod 97, centered to -23.
        let out = g
            .eval_plain(
                &feeds_of(&[(x, IntTensor::new(vec![1], vec![40]).unwrap())]),
                Some(&m),
            )
            .unwrap();
        assert_eq!(i64::try_from(&out.data()[0]).unwrap(), -23);
    }

    #[test]
    fn outputs_land_inside_the_propagated_domain() {
        let mut b = GraphBuilder::new();
        let x = b.placeholder(&[3], 4, true).unwrap();
        let sq = b.square(x).unwrap();
        let y = b.sub(sq, x).unwrap();
        let g = b.build(y).unwrap();
        let domain = g.output_domain().clone();
        for a in -4i64..=4 {
            let feed = IntTensor::new(vec![3], vec![a, -a, 0]).unwrap();
            let out = g.eval_plain(&feeds_of(&[(x, feed)]), None).unwrap();
            for v in out.data() {
                assert!(domain.contains(v), "{v} outside {domain:?}");
            }
        }
    }

    #[test]
    fn recorded_domain_is_contained_in_the_propagated_one() {
        let mut b = GraphBuilder::new();
        let x = b.placeholder(&[2], 10, true).unwrap();
        let sq = b.square(x).unwrap();
        let g = b.build(sq).unwrap();
        let mut g = g;
        let batch: Vec<Feeds> = [-3i64, 1, 7]
            .iter()
            .map(|&v| feeds_of(&[(x, IntTensor::new(vec![2], vec![v, v]).unwrap())]))
            .collect();
        let recorded = g.record_output_domain(&batch).unwrap();
        assert_eq!(recorded, Interval::from_i64(1, 49).unwrap());
        assert!(g.output_domain().contains_interval(&recorded));
        assert_eq!(g.sizing_domain(), &recorded);
        assert!(matches!(
            g.record_output_domain(&[]),
            Err(GraphError::EmptyBatch)
        ));
    }
}
