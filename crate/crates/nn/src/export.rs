//! Discretization of a trained model into an integer graph.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};
use slhe_core::graph::{Graph, GraphBuilder, IntTensor};

use crate::layers::{window_hw, Layer};
use crate::model::Sequential;
use crate::{round_half_away, NnError};

/// Integer tensor in serializable form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorI {
    pub shape: Vec<usize>,
    pub data: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscreteLayer {
    Dense {
        w: TensorI,
        b: Vec<i64>,
        saturation: i64,
    },
    Conv {
        kernel: TensorI,
        b: Vec<i64>,
        strides: (usize, usize),
        saturation: i64,
    },
    Square,
    SumPool {
        window: (usize, usize),
        strides: (usize, usize),
    },
    Flatten,
    Gate {
        mask: Vec<u8>,
    },
}

/// Integer-only model description: exactly what the inference engine needs,
/// nothing trainable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscretizedModel {
    pub version: u32,
    pub input_shape: Vec<usize>,
    pub input_saturation: i64,
    pub layers: Vec<DiscreteLayer>,
}

impl DiscretizedModel {
    pub const VERSION: u32 = 1;
}

fn to_int(v: f64, what: &str) -> Result<i64, NnError> {
    let r = round_half_away(v);
    if !r.is_finite() || r.abs() >= 2f64.powi(62) {
        return Err(NnError::Export(format!(
            "{what} value {v} does not fit an integer weight"
        )));
    }
    Ok(r as i64)
}

fn discretize_tensor(t: &ArrayD<f64>, scale: f64, what: &str) -> Result<TensorI, NnError> {
    Ok(TensorI {
        shape: t.shape().to_vec(),
        data: t
            .iter()
            .map(|&v| to_int(v * scale, what))
            .collect::<Result<_, _>>()?,
    })
}

/// Discretizes every layer with round-half-away-from-zero and collects the
/// binary inference gates.
pub fn export(model: &Sequential) -> Result<(DiscretizedModel, Graph), NnError> {
    let scales = model.input_scales();
    let mut layers = Vec::with_capacity(model.layers.len());
    for (layer, &in_scale) in model.layers.iter().zip(&scales) {
        layers.push(match layer {
            Layer::Dense(d) => {
                let s = d.saturation as f64;
                DiscreteLayer::Dense {
                    w: discretize_tensor(&d.w.clone().into_dyn(), s, "dense weight")?,
                    b: d
                        .b
                        .iter()
                        .map(|&v| to_int(v * in_scale * s, "dense bias"))
                        .collect::<Result<_, _>>()?,
                    saturation: d.saturation,
                }
            }
            Layer::Conv(c) => {
                let s = c.saturation as f64;
                DiscreteLayer::Conv {
                    kernel: discretize_tensor(&c.kernel.clone().into_dyn(), s, "conv kernel")?,
                    b: c
                        .b
                        .iter()
                        .map(|&v| to_int(v * in_scale * s, "conv bias"))
                        .collect::<Result<_, _>>()?,
                    strides: c.strides,
                    saturation: c.saturation,
                }
            }
            Layer::Square => DiscreteLayer::Square,
            Layer::SumPool { window, strides } => DiscreteLayer::SumPool {
                window: *window,
                strides: *strides,
            },
            Layer::Flatten => DiscreteLayer::Flatten,
            Layer::Gate(g) => DiscreteLayer::Gate {
                mask: g.inference_mask(),
            },
        });
    }
    let dm = DiscretizedModel {
        version: DiscretizedModel::VERSION,
        input_shape: model.input_shape.clone(),
        input_saturation: model.input_saturation,
        layers,
    };
    let graph = to_graph(&dm)?;
    Ok((dm, graph))
}

/// Rebuilds the computational graph from the integer description. The same
/// description always yields the same graph.
pub fn to_graph(dm: &DiscretizedModel) -> Result<Graph, NnError> {
    let mut b = GraphBuilder::new();
    let mut cur = b.placeholder(&dm.input_shape, dm.input_saturation, false)?;
    let mut shape = dm.input_shape.clone();
    for layer in &dm.layers {
        match layer {
            DiscreteLayer::Dense { w, b: bias, .. } => {
                if w.shape.len() != 2 || bias.len() != w.shape[1] {
                    return Err(NnError::Export(format!(
                        "dense layer weights {:?} with {} biases",
                        w.shape,
                        bias.len()
                    )));
                }
                cur = b.matmul(cur, IntTensor::new(w.shape.clone(), w.data.clone())?)?;
                let c = b.constant(IntTensor::new(vec![bias.len()], bias.clone())?);
                cur = b.add(cur, c)?;
                shape = vec![w.shape[1]];
            }
            DiscreteLayer::Conv {
                kernel,
                b: bias,
                strides,
                ..
            } => {
                if kernel.shape.len() != 4 || shape.len() != 3 || bias.len() != kernel.shape[3] {
                    return Err(NnError::Export(format!(
                        "conv kernel {:?} with {} biases over {shape:?}",
                        kernel.shape,
                        bias.len()
                    )));
                }
                let (kh, kw, cout) = (kernel.shape[0], kernel.shape[1], kernel.shape[3]);
                cur = b.conv2d(
                    cur,
                    IntTensor::new(kernel.shape.clone(), kernel.data.clone())?,
                    *strides,
                )?;
                let (oh, ow) = window_hw((shape[0], shape[1]), (kh, kw), *strides)?;
                let mut bias_data = Vec::with_capacity(oh * ow * cout);
                for _ in 0..oh * ow {
                    bias_data.extend_from_slice(bias);
                }
                let c = b.constant(IntTensor::new(vec![oh, ow, cout], bias_data)?);
                cur = b.add(cur, c)?;
                shape = vec![oh, ow, cout];
            }
            DiscreteLayer::Square => {
                cur = b.square(cur)?;
            }
            DiscreteLayer::SumPool { window, strides } => {
                cur = b.sum_pool(cur, *window, *strides)?;
                let (oh, ow) = window_hw((shape[0], shape[1]), *window, *strides)?;
                shape = vec![oh, ow, shape[2]];
            }
            DiscreteLayer::Flatten => {
                cur = b.flatten(cur)?;
                shape = vec![shape.iter().product()];
            }
            DiscreteLayer::Gate { mask } => {
                cur = b.gate_mask(cur, mask.clone())?;
            }
        }
    }
    Ok(b.build(cur)?)
}
