//! Versioned JSON serialization of graphs.
//!
//! The document stores the node list with op attributes; weight tensors are
//! base64 blobs of little-endian 64-bit values. Shapes and domains of derived
//! nodes are not stored: they are recomputed on load, which rejects documents
//! whose structure is inconsistent.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use super::{Graph, GraphError, IntTensor, Interval, Node, OpKind};

const FORMAT: &str = "slhe-graph";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    format: String,
    version: u32,
    output: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    recorded_output_domain: Option<IntervalDoc>,
    nodes: Vec<NodeDoc>,
}

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    op: OpDoc,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    inputs: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum OpDoc {
    Placeholder {
        shape: Vec<usize>,
        saturation: i64,
        signed: bool,
    },
    Const {
        value: TensorDoc,
    },
    Add,
    Sub,
    Neg,
    Mul,
    Square,
    Matmul {
        weights: TensorDoc,
    },
    Conv2d {
        kernel: TensorDoc,
        strides: [usize; 2],
    },
    SumPool {
        kernel: [usize; 2],
        strides: [usize; 2],
    },
    Flatten,
    GateMask {
        gates: Vec<u8>,
    },
}

#[derive(Serialize, Deserialize)]
struct TensorDoc {
    shape: Vec<usize>,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct IntervalDoc {
    lo: String,
    hi: String,
}

impl TensorDoc {
    fn from_tensor(t: &IntTensor) -> Self {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        TensorDoc {
            shape: t.shape().to_vec(),
            data: BASE64.encode(bytes),
        }
    }

    fn into_tensor(self) -> Result<IntTensor, GraphError> {
        let bytes = BASE64
            .decode(&self.data)
            .map_err(|e| GraphError::Serialization(format!("tensor blob: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(GraphError::Serialization(format!(
                "tensor blob has {} bytes, not a multiple of 8",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        IntTensor::new(self.shape, data)
    }
}

impl IntervalDoc {
    fn from_interval(iv: &Interval) -> Self {
        IntervalDoc {
            lo: iv.lo().to_string(),
            hi: iv.hi().to_string(),
        }
    }

    fn into_interval(self) -> Result<Interval, GraphError> {
        let parse = |s: &str| {
            s.parse::<BigInt>()
                .map_err(|e| GraphError::Serialization(format!("interval bound {s:?}: {e}")))
        };
        Interval::new(parse(&self.lo)?, parse(&self.hi)?)
    }
}

fn op_to_doc(node: &Node) -> OpDoc {
    match &node.op {
        OpKind::Placeholder { saturation, signed } => OpDoc::Placeholder {
            shape: node.shape.clone(),
            saturation: *saturation,
            signed: *signed,
        },
        OpKind::Const { value } => OpDoc::Const {
            value: TensorDoc::from_tensor(value),
        },
        OpKind::Add => OpDoc::Add,
        OpKind::Sub => OpDoc::Sub,
        OpKind::Neg => OpDoc::Neg,
        OpKind::Mul => OpDoc::Mul,
        OpKind::Square => OpDoc::Square,
        OpKind::MatMul { weights } => OpDoc::Matmul {
            weights: TensorDoc::from_tensor(weights),
        },
        OpKind::Conv2D { kernel, strides } => OpDoc::Conv2d {
            kernel: TensorDoc::from_tensor(kernel),
            strides: [strides.0, strides.1],
        },
        OpKind::SumPool { kernel, strides } => OpDoc::SumPool {
            kernel: [kernel.0, kernel.1],
            strides: [strides.0, strides.1],
        },
        OpKind::Flatten => OpDoc::Flatten,
        OpKind::GateMask { gates } => OpDoc::GateMask {
            gates: gates.clone(),
        },
    }
}

fn op_from_doc(doc: OpDoc) -> Result<(OpKind, Vec<usize>), GraphError> {
    Ok(match doc {
        OpDoc::Placeholder {
            shape,
            saturation,
            signed,
        } => (OpKind::Placeholder { saturation, signed }, shape),
        OpDoc::Const { value } => (
            OpKind::Const {
                value: value.into_tensor()?,
            },
            vec![],
        ),
        OpDoc::Add => (OpKind::Add, vec![]),
        OpDoc::Sub => (OpKind::Sub, vec![]),
        OpDoc::Neg => (OpKind::Neg, vec![]),
        OpDoc::Mul => (OpKind::Mul, vec![]),
        OpDoc::Square => (OpKind::Square, vec![]),
        OpDoc::Matmul { weights } => (
            OpKind::MatMul {
                weights: weights.into_tensor()?,
            },
            vec![],
        ),
        OpDoc::Conv2d { kernel, strides } => (
            OpKind::Conv2D {
                kernel: kernel.into_tensor()?,
                strides: (strides[0], strides[1]),
            },
            vec![],
        ),
        OpDoc::SumPool { kernel, strides } => (
            OpKind::SumPool {
                kernel: (kernel[0], kernel[1]),
                strides: (strides[0], strides[1]),
            },
            vec![],
        ),
        OpDoc::Flatten => (OpKind::Flatten, vec![]),
        OpDoc::GateMask { gates } => (OpKind::GateMask { gates }, vec![]),
    })
}

impl Graph {
    pub fn to_json(&self) -> Result<String, GraphError> {
        let doc = GraphDoc {
            format: FORMAT.to_string(),
            version: VERSION,
            output: self.output(),
            recorded_output_domain: self
                .recorded_output_domain()
                .map(IntervalDoc::from_interval),
            nodes: self
                .nodes()
                .iter()
                .map(|n| NodeDoc {
                    op: op_to_doc(n),
                    inputs: n.inputs.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| GraphError::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Graph, GraphError> {
        let doc: GraphDoc =
            serde_json::from_str(text).map_err(|e| GraphError::Serialization(e.to_string()))?;
        if doc.format != FORMAT {
            return Err(GraphError::Serialization(format!(
                "unrecognized format {:?}",
                doc.format
            )));
        }
        if doc.version != VERSION {
            return Err(GraphError::Serialization(format!(
                "unsupported version {}, this build reads {VERSION}",
                doc.version
            )));
        }
        if doc.nodes.is_empty() {
            return Err(GraphError::Serialization("graph has no nodes".into()));
        }
        let mut nodes = Vec::with_capacity(doc.nodes.len());
        for (id, node_doc) in doc.nodes.into_iter().enumerate() {
            let (op, placeholder_shape) = op_from_doc(node_doc.op)?;
            nodes.push(Node {
                id,
                op,
                inputs: node_doc.inputs,
                shape: placeholder_shape,
                domain: Interval::point(0),
            });
        }
        let mut graph = Graph {
            nodes,
            output: doc.output,
            recorded_output_domain: None,
        };
        graph.recompute_and_check()?;
        if let Some(iv) = doc.recorded_output_domain {
            graph.recorded_output_domain = Some(iv.into_interval()?);
        }
        Ok(graph)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::eval::Feeds;
    use crate::graph::GraphBuilder;

    fn sample_graph() -> Graph {
        let mut b = GraphBuilder::new();
        let x = b.placeholder(&[4, 4, 1], 4, false).unwrap();
        let kernel = IntTensor::new(vec![2, 2, 1, 2], (1..=8).collect()).unwrap();
        let c = b.conv2d(x, kernel, (2, 2)).unwrap();
        let gated = b.gate_mask(c, vec![1, 0]).unwrap();
        let p = b.sum_pool(gated, (2, 2), (1, 1)).unwrap();
        let f = b.flatten(p).unwrap();
        let sq = b.square(f).unwrap();
        let w = IntTensor::new(vec![2, 3], vec![1, -2, 3, 0, 4, -5]).unwrap();
        let y = b.matmul(sq, w).unwrap();
        let bias = b.constant(IntTensor::new(vec![3], vec![7, -7, 0]).unwrap());
        let out = b.add(y, bias).unwrap();
        b.build(out).unwrap()
    }

    #[test]
    fn round_trip_preserves_structure_domains_and_semantics() {
        let mut g = sample_graph();
        let x = g.placeholders()[0];
        let feeds: Feeds = [(
            x,
            IntTensor::new(vec![4, 4, 1], (0..16).map(|v| v % 5).collect()).unwrap(),
        )]
        .into_iter()
        .collect();
        g.record_output_domain(std::slice::from_ref(&feeds)).unwrap();

        let json = g.to_json().unwrap();
        let back = Graph::from_json(&json).unwrap();

        assert_eq!(back.nodes().len(), g.nodes().len());
        assert_eq!(back.output(), g.output());
        for (a, b) in g.nodes().iter().zip(back.nodes()) {
            assert_eq!(a.op, b.op, "node {}", a.id);
            assert_eq!(a.inputs, b.inputs);
            assert_eq!(a.shape, b.shape);
            assert_eq!(a.domain, b.domain);
        }
        assert_eq!(back.recorded_output_domain(), g.recorded_output_domain());
        assert_eq!(
            back.eval_plain(&feeds, None).unwrap(),
            g.eval_plain(&feeds, None).unwrap()
        );
    }

    #[test]
    fn round_trip_without_recorded_domain() {
        let g = sample_graph();
        let back = Graph::from_json(&g.to_json().unwrap()).unwrap();
        assert!(back.recorded_output_domain().is_none());
    }

    #[test]
    fn wrong_format_and_version_are_rejected() {
        let g = sample_graph();
        let json = g.to_json().unwrap();
        let wrong_format = json.replace("slhe-graph", "not-a-graph");
        assert!(Graph::from_json(&wrong_format).is_err());
        let wrong_version = json.replace("\"version\": 1", "\"version\": 2");
        assert!(Graph::from_json(&wrong_version).is_err());
    }

    #[test]
    fn forward_references_are_rejected() {
        let json = r#"{
            "format": "slhe-graph",
            "version": 1,
            "output": 1,
            "nodes": [
                {"op": {"kind": "neg"}, "inputs": [1]},
                {"op": {"kind": "placeholder", "shape": [2], "saturation": 1, "signed": false}}
            ]
        }"#;
        assert!(matches!(
            Graph::from_json(json),
            Err(GraphError::Serialization(_))
        ));
    }

    #[test]
    fn wrong_arity_is_rejected() {
        let json = r#"{
            "format": "slhe-graph",
            "version": 1,
            "output": 1,
            "nodes": [
                {"op": {"kind": "placeholder", "shape": [2], "saturation": 1, "signed": false}},
                {"op": {"kind": "add"}, "inputs": [0]}
            ]
        }"#;
        assert!(matches!(
            Graph::from_json(json),
            Err(GraphError::Serialization(_))
        ));
    }

    #[test]
    fn inconsistent_shapes_are_rejected_on_load() {
        let json = r#"{
            "format": "slhe-graph",
            "version": 1,
            "output": 2,
            "nodes": [
                {"op": {"kind": "placeholder", "shape": [2], "saturation": 1, "signed": false}},
                {"op": {"kind": "placeholder", "shape": [3], "saturation": 1, "signed": false}},
                {"op": {"kind": "add"}, "inputs": [0, 1]}
            ]
        }"#;
        assert!(matches!(
            Graph::from_json(json),
            Err(GraphError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn corrupt_weight_blobs_are_rejected() {
        let g = sample_graph();
        let json = g.to_json().unwrap();
        let doc: serde_json::Value = serde_json::from_str(&json).unwrap();
        let blob = doc["nodes"][1]["op"]["kernel"]["data"].as_str().unwrap();
        let truncated = json.replace(blob, &blob[..blob.len() - 8]);
        assert!(Graph::from_json(&truncated).is_err());
        let not_base64 = json.replace(blob, "!!not base64!!");
        assert!(Graph::from_json(&not_base64).is_err());
    }

    #[test]
    fn out_of_range_output_is_rejected() {
        let json = r#"{
            "format": "slhe-graph",
            "version": 1,
            "output": 5,
            "nodes": [
                {"op": {"kind": "placeholder", "shape": [2], "saturation": 1, "signed": false}}
            ]
        }"#;
        assert!(matches!(
            Graph::from_json(json),
            Err(GraphError::UnknownNode(5))
        ));
    }
}
