//! Versioned JSON model files: float weights for resuming, the integer
//! export for inference, training history.

use ndarray::{Array1, Array2, Array4, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::export::{export, DiscretizedModel};
use crate::gates::{L0Config, L0Gate};
use crate::layers::{ConvLayer, DenseLayer, Layer};
use crate::model::Sequential;
use crate::train::{EpochStats, TrainConfig};
use crate::NnError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorF {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorF {
    fn from_dyn(a: &ArrayD<f64>) -> Self {
        TensorF {
            shape: a.shape().to_vec(),
            data: a.iter().copied().collect(),
        }
    }

    fn to_dyn(&self) -> Result<ArrayD<f64>, NnError> {
        ArrayD::from_shape_vec(IxDyn(&self.shape), self.data.clone())
            .map_err(|e| NnError::Serialization(format!("tensor shape mismatch: {e}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerFile {
    Dense {
        w: TensorF,
        b: Vec<f64>,
        saturation: i64,
    },
    Conv {
        kernel: TensorF,
        b: Vec<f64>,
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
        log_alpha: Vec<f64>,
        beta: f64,
        gamma: f64,
        zeta: f64,
        l0_weight: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub input_shape: Vec<usize>,
    pub input_saturation: i64,
    pub layers: Vec<LayerFile>,
    pub training: Option<TrainConfig>,
    pub history: Vec<EpochStats>,
    pub discretized: DiscretizedModel,
}

impl ModelFile {
    pub const VERSION: u32 = 1;

    pub fn from_model(
        model: &Sequential,
        training: Option<&TrainConfig>,
        history: &[EpochStats],
    ) -> Result<Self, NnError> {
        let (discretized, _) = export(model)?;
        let layers = model
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Dense(d) => LayerFile::Dense {
                    w: TensorF::from_dyn(&d.w.clone().into_dyn()),
                    b: d.b.to_vec(),
                    saturation: d.saturation,
                },
                Layer::Conv(c) => LayerFile::Conv {
                    kernel: TensorF::from_dyn(&c.kernel.clone().into_dyn()),
                    b: c.b.to_vec(),
                    strides: c.strides,
                    saturation: c.saturation,
                },
                Layer::Square => LayerFile::Square,
                Layer::SumPool { window, strides } => LayerFile::SumPool {
                    window: *window,
                    strides: *strides,
                },
                Layer::Flatten => LayerFile::Flatten,
                Layer::Gate(g) => LayerFile::Gate {
                    log_alpha: g.log_alpha.to_vec(),
                    beta: g.cfg.beta,
                    gamma: g.cfg.gamma,
                    zeta: g.cfg.zeta,
                    l0_weight: g.cfg.l0_weight,
                },
            })
            .collect();
        Ok(ModelFile {
            version: Self::VERSION,
            input_shape: model.input_shape.clone(),
            input_saturation: model.input_saturation,
            layers,
            training: training.cloned(),
            history: history.to_vec(),
            discretized,
        })
    }

    /// Restores the float-shadow model, e.g. to resume training.
    pub fn to_model(&self) -> Result<Sequential, NnError> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            layers.push(match layer {
                LayerFile::Dense { w, b, saturation } => {
                    let w = w
                        .to_dyn()?
                        .into_dimensionality::<ndarray::Ix2>()
                        .map_err(|_| NnError::Serialization("dense weights not 2-D".into()))?;
                    Layer::Dense(DenseLayer {
                        w: Array2::from(w),
                        b: Array1::from_vec(b.clone()),
                        saturation: *saturation,
                    })
                }
                LayerFile::Conv {
                    kernel,
                    b,
                    strides,
                    saturation,
                } => {
                    let k = kernel
                        .to_dyn()?
                        .into_dimensionality::<ndarray::Ix4>()
                        .map_err(|_| NnError::Serialization("conv kernel not 4-D".into()))?;
                    Layer::Conv(ConvLayer {
                        kernel: Array4::from(k),
                        b: Array1::from_vec(b.clone()),
                        strides: *strides,
                        saturation: *saturation,
                    })
                }
                LayerFile::Square => Layer::Square,
                LayerFile::SumPool { window, strides } => Layer::SumPool {
                    window: *window,
                    strides: *strides,
                },
                LayerFile::Flatten => Layer::Flatten,
                LayerFile::Gate {
                    log_alpha,
                    beta,
                    gamma,
                    zeta,
                    l0_weight,
                } => {
                    let cfg = L0Config {
                        beta: *beta,
                        gamma: *gamma,
                        zeta: *zeta,
                        l0_weight: *l0_weight,
                    };
                    cfg.validate()?;
                    Layer::Gate(L0Gate {
                        log_alpha: Array1::from_vec(log_alpha.clone()),
                        cfg,
                    })
                }
            });
        }
        Ok(Sequential {
            input_shape: self.input_shape.clone(),
            input_saturation: self.input_saturation,
            layers,
        })
    }

    pub fn to_json(&self) -> Result<String, NnError> {
        serde_json::to_string_pretty(self).map_err(|e| NnError::Serialization(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, NnError> {
        let file: ModelFile =
            serde_json::from_str(s).map_err(|e| NnError::Serialization(e.to_string()))?;
        if file.version != Self::VERSION {
            return Err(NnError::Serialization(format!(
                "unsupported model file version {}",
                file.version
            )));
        }
        Ok(file)
    }
}
