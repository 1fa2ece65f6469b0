//! Sequential model container and builder.

use ndarray::{ArrayD, Ix2};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::gates::{L0Config, L0Gate};
use crate::layers::{window_hw, Cache, ConvLayer, DenseLayer, Layer, LayerGrads, Mode};
use crate::NnError;

#[derive(Debug, Clone)]
pub struct Sequential {
    pub input_shape: Vec<usize>,
    /// Upper bound of the nonnegative integer inputs.
    pub input_saturation: i64,
    pub layers: Vec<Layer>,
}

/// Gradients for every layer, in layer order.
#[derive(Debug, Clone)]
pub struct Grads {
    pub layers: Vec<LayerGrads>,
}

impl Sequential {
    /// Accumulated integer scale entering each layer, starting at 1 for the
    /// raw integer inputs. Used to discretize biases.
    pub(crate) fn input_scales(&self) -> Vec<f64> {
        let mut scale = 1.0;
        let mut scales = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            scales.push(scale);
            scale = layer.scale_after(scale);
        }
        scales
    }

    pub(crate) fn forward_full(
        &self,
        x: &ArrayD<f64>,
        mode: Mode,
        rng: &mut ChaCha20Rng,
    ) -> Result<(ndarray::Array2<f64>, Vec<Cache>), NnError> {
        if x.ndim() < 2 || x.shape()[1..] != self.input_shape[..] {
            return Err(NnError::Shape(format!(
                "batch shape {:?} does not end with the model input shape {:?}",
                x.shape(),
                self.input_shape
            )));
        }
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut scale = 1.0;
        for layer in &self.layers {
            let (y, cache) = layer.forward(cur, mode, scale, rng)?;
            scale = layer.scale_after(scale);
            caches.push(cache);
            cur = y;
        }
        let logits = cur
            .into_dimensionality::<Ix2>()
            .map_err(|_| NnError::Shape("model output is not a [batch, classes] matrix".into()))?;
        Ok((logits, caches))
    }

    /// Logits for a batch. Train mode samples gates from `rng`; eval mode is
    /// deterministic and leaves `rng` untouched.
    pub fn forward(
        &self,
        x: &ArrayD<f64>,
        mode: Mode,
        rng: &mut ChaCha20Rng,
    ) -> Result<ndarray::Array2<f64>, NnError> {
        self.forward_full(x, mode, rng).map(|(logits, _)| logits)
    }

    /// Deterministic eval-mode logits; the value path exported graphs
    /// reproduce.
    pub fn predict(&self, x: &ArrayD<f64>) -> Result<ndarray::Array2<f64>, NnError> {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        self.forward(x, Mode::Eval, &mut rng)
    }

    pub(crate) fn backward_full(
        &self,
        caches: &[Cache],
        dlogits: ndarray::Array2<f64>,
    ) -> Grads {
        let mut dy = dlogits.into_dyn();
        let mut grads = vec![LayerGrads::None; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (dx, g) = layer.backward(&caches[i], dy);
            grads[i] = g;
            dy = dx;
        }
        Grads { layers: grads }
    }

    pub fn gates(&self) -> Vec<&L0Gate> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Gate(g) => Some(g),
                _ => None,
            })
            .collect()
    }

    /// Expected-L0 regularization term of the training loss.
    pub fn l0_penalty(&self) -> f64 {
        self.gates().iter().map(|g| g.penalty()).sum()
    }

    /// Adds the penalty gradient to every gate layer's gradient.
    pub(crate) fn add_penalty_grads(&self, grads: &mut Grads) {
        for (layer, grad) in self.layers.iter().zip(&mut grads.layers) {
            if let (Layer::Gate(g), LayerGrads::Gate { dlog_alpha }) = (layer, grad) {
                *dlog_alpha += &g.penalty_grad();
            }
        }
    }

    pub fn total_gate_count(&self) -> usize {
        self.gates().iter().map(|g| g.log_alpha.len()).sum()
    }

    pub fn active_gate_count(&self) -> usize {
        self.gates().iter().map(|g| g.active_count()).sum()
    }

    /// Per-example shape after every layer; the last entry is the logits
    /// shape.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shape = self.input_shape.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer_output_shape(layer, &shape)?;
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }
}

pub(crate) fn layer_output_shape(layer: &Layer, shape: &[usize]) -> Result<Vec<usize>, NnError> {
    Ok(match layer {
        Layer::Dense(d) => {
            if shape.len() != 1 || shape[0] != d.w.nrows() {
                return Err(NnError::Shape(format!(
                    "dense layer over input shape {shape:?}, weights {:?}",
                    d.w.dim()
                )));
            }
            vec![d.w.ncols()]
        }
        Layer::Conv(c) => {
            let (kh, kw, cin, cout) = c.kernel.dim();
            if shape.len() != 3 || shape[2] != cin {
                return Err(NnError::Shape(format!(
                    "conv layer over input shape {shape:?}, kernel channels {cin}"
                )));
            }
            let (oh, ow) = window_hw((shape[0], shape[1]), (kh, kw), c.strides)?;
            vec![oh, ow, cout]
        }
        Layer::Square => shape.to_vec(),
        Layer::SumPool { window, strides } => {
            if shape.len() != 3 {
                return Err(NnError::Shape(format!("sum pool over input shape {shape:?}")));
            }
            let (oh, ow) = window_hw((shape[0], shape[1]), *window, *strides)?;
            vec![oh, ow, shape[2]]
        }
        Layer::Flatten => vec![shape.iter().product()],
        Layer::Gate(g) => {
            if *shape.last().expect("shapes are never empty") != g.log_alpha.len() {
                return Err(NnError::Shape(format!(
                    "{} gates over input shape {shape:?}",
                    g.log_alpha.len()
                )));
            }
            shape.to_vec()
        }
    })
}

/// Builds a Sequential with seeded initialization, tracking shapes so layer
/// mismatches surface at construction.
pub struct ModelBuilder {
    input_shape: Vec<usize>,
    input_saturation: i64,
    shape: Vec<usize>,
    layers: Vec<Layer>,
    rng: ChaCha20Rng,
}

impl ModelBuilder {
    pub fn new(input_shape: &[usize], input_saturation: i64, seed: u64) -> Result<Self, NnError> {
        if input_shape.is_empty() || input_shape.iter().product::<usize>() == 0 {
            return Err(NnError::Shape(format!("empty input shape {input_shape:?}")));
        }
        if input_saturation < 1 {
            return Err(NnError::Parameter(format!(
                "input saturation {input_saturation} must be positive"
            )));
        }
        Ok(ModelBuilder {
            input_shape: input_shape.to_vec(),
            input_saturation,
            shape: input_shape.to_vec(),
            layers: Vec::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
        })
    }

    fn push(mut self, layer: Layer) -> Result<Self, NnError> {
        self.shape = layer_output_shape(&layer, &self.shape)?;
        self.layers.push(layer);
        Ok(self)
    }

    pub fn dense(mut self, outputs: usize, saturation: i64) -> Result<Self, NnError> {
        if self.shape.len() != 1 {
            return Err(NnError::Shape(format!(
                "dense layer needs a flattened input, current shape {:?}",
                self.shape
            )));
        }
        let layer = DenseLayer::init(self.shape[0], outputs, saturation, &mut self.rng)?;
        self.push(Layer::Dense(layer))
    }

    pub fn conv(
        mut self,
        filters: usize,
        kernel: (usize, usize),
        strides: (usize, usize),
        saturation: i64,
    ) -> Result<Self, NnError> {
        if self.shape.len() != 3 {
            return Err(NnError::Shape(format!(
                "conv layer needs a [h, w, c] input, current shape {:?}",
                self.shape
            )));
        }
        let layer = ConvLayer::init(
            kernel.0,
            kernel.1,
            self.shape[2],
            filters,
            strides,
            saturation,
            &mut self.rng,
        )?;
        self.push(Layer::Conv(layer))
    }

    pub fn square(self) -> Result<Self, NnError> {
        self.push(Layer::Square)
    }

    pub fn sum_pool(
        self,
        window: (usize, usize),
        strides: (usize, usize),
    ) -> Result<Self, NnError> {
        self.push(Layer::SumPool { window, strides })
    }

    pub fn flatten(self) -> Result<Self, NnError> {
        self.push(Layer::Flatten)
    }

    pub fn gate(mut self, cfg: L0Config) -> Result<Self, NnError> {
        let channels = *self.shape.last().expect("shapes are never empty");
        let gate = L0Gate::new(channels, cfg, &mut self.rng)?;
        self.push(Layer::Gate(gate))
    }

    pub fn build(self) -> Result<Sequential, NnError> {
        if self.layers.is_empty() {
            return Err(NnError::Parameter("model has no layers".into()));
        }
        if self.shape.len() != 1 {
            return Err(NnError::Shape(format!(
                "model output shape {:?} is not a class vector",
                self.shape
            )));
        }
        Ok(Sequential {
            input_shape: self.input_shape,
            input_saturation: self.input_saturation,
            layers: self.layers,
        })
    }
}
