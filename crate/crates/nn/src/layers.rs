//! Trainable layers with a discretized forward pass and straight-through
//! gradients.
//!
//! The forward value path always uses the integer weights `round(w * s)`
//! (except in surrogate mode, which replaces every rounding by the identity
//! for gradient checking). Backward passes the upstream gradient through
//! the rounding unchanged and applies the chain rule only to the scale
//! factors, so weight gradients are independent of the rounding residual.
//!
//! Biases feed into values that already carry the product of all upstream
//! scales, so a layer with saturation s and accumulated input scale S
//! discretizes its bias as `round(b * S * s)`, keeping the addition
//! homogeneous in the integer domain.

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix2, Ix4};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::gates::L0Gate;
use crate::{round_half_away, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Discretized weights, sampled rounded gates.
    Train,
    /// Discretized weights, deterministic binary gates; the path exported
    /// models reproduce.
    Eval,
    /// Every rounding replaced by the identity; continuous gates. Used by
    /// finite-difference gradient checks.
    Surrogate,
}

impl Mode {
    fn discrete(self) -> bool {
        !matches!(self, Mode::Surrogate)
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// [inputs, outputs]
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub saturation: i64,
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    /// [kh, kw, c_in, c_out]
    pub kernel: Array4<f64>,
    pub b: Array1<f64>,
    pub strides: (usize, usize),
    pub saturation: i64,
}

/// Uniform init bounded below by the discretization step, since weights
/// under 1/(2s) round to zero.
fn init_limit(fan_in: usize, fan_out: usize, saturation: i64) -> f64 {
    (6.0 / (fan_in + fan_out) as f64)
        .sqrt()
        .max(1.0 / saturation as f64)
}

impl DenseLayer {
    pub fn init(
        inputs: usize,
        outputs: usize,
        saturation: i64,
        rng: &mut ChaCha20Rng,
    ) -> Result<Self, NnError> {
        if inputs == 0 || outputs == 0 || saturation < 1 {
            return Err(NnError::Parameter(format!(
                "dense layer {inputs}x{outputs} with saturation {saturation}"
            )));
        }
        let limit = init_limit(inputs, outputs, saturation);
        Ok(DenseLayer {
            w: Array2::from_shape_fn((inputs, outputs), |_| rng.random_range(-limit..limit)),
            b: Array1::zeros(outputs),
            saturation,
        })
    }
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        kh: usize,
        kw: usize,
        c_in: usize,
        c_out: usize,
        strides: (usize, usize),
        saturation: i64,
        rng: &mut ChaCha20Rng,
    ) -> Result<Self, NnError> {
        if kh == 0 || kw == 0 || c_in == 0 || c_out == 0 || saturation < 1 {
            return Err(NnError::Parameter(format!(
                "conv layer {kh}x{kw}x{c_in}x{c_out} with saturation {saturation}"
            )));
        }
        if strides.0 == 0 || strides.1 == 0 {
            return Err(NnError::Parameter("conv strides must be positive".into()));
        }
        let limit = init_limit(kh * kw * c_in, kh * kw * c_out, saturation);
        Ok(ConvLayer {
            kernel: Array4::from_shape_fn((kh, kw, c_in, c_out), |_| {
                rng.random_range(-limit..limit)
            }),
            b: Array1::zeros(c_out),
            strides,
            saturation,
        })
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(DenseLayer),
    Conv(ConvLayer),
    Square,
    SumPool {
        window: (usize, usize),
        strides: (usize, usize),
    },
    Flatten,
    Gate(L0Gate),
}

/// Per-parameter gradients for one layer, shapes mirroring the layer.
#[derive(Debug, Clone)]
pub enum LayerGrads {
    Dense { dw: Array2<f64>, db: Array1<f64> },
    Conv { dk: Array4<f64>, db: Array1<f64> },
    Gate { dlog_alpha: Array1<f64> },
    None,
}

/// Activations and effective weights saved by a forward pass.
pub(crate) enum Cache {
    Dense {
        x: Array2<f64>,
        w_eff: Array2<f64>,
        wscale: f64,
        bscale: f64,
    },
    Conv {
        patches: Array2<f64>,
        kmat: Array2<f64>,
        in_shape: [usize; 4],
        out_hw: (usize, usize),
        wscale: f64,
        bscale: f64,
    },
    Square {
        x: ArrayD<f64>,
    },
    SumPool {
        in_shape: Vec<usize>,
    },
    Flatten {
        in_shape: Vec<usize>,
    },
    Gate {
        x: ArrayD<f64>,
        z: Array1<f64>,
        dz_dla: Array1<f64>,
    },
}

/// Output height/width of a valid-padding window sweep; mirrors the graph
/// module's convolution geometry.
pub(crate) fn window_hw(
    (h, w): (usize, usize),
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
) -> Result<(usize, usize), NnError> {
    if kh == 0 || kw == 0 || sh == 0 || sw == 0 || h < kh || w < kw {
        return Err(NnError::Shape(format!(
            "window {kh}x{kw} stride {sh}x{sw} does not fit input {h}x{w}"
        )));
    }
    Ok(((h - kh) / sh + 1, (w - kw) / sw + 1))
}

fn scaled(w: &ArrayD<f64>, scale: f64, discrete: bool) -> ArrayD<f64> {
    if discrete {
        w.mapv(|v| round_half_away(v * scale))
    } else {
        w.mapv(|v| v * scale)
    }
}

impl Layer {
    /// Multiplier this layer applies to the accumulated integer scale.
    pub(crate) fn scale_after(&self, in_scale: f64) -> f64 {
        match self {
            Layer::Dense(d) => in_scale * d.saturation as f64,
            Layer::Conv(c) => in_scale * c.saturation as f64,
            Layer::Square => in_scale * in_scale,
            Layer::SumPool { .. } | Layer::Flatten | Layer::Gate(_) => in_scale,
        }
    }

    pub(crate) fn forward(
        &self,
        x: ArrayD<f64>,
        mode: Mode,
        in_scale: f64,
        rng: &mut ChaCha20Rng,
    ) -> Result<(ArrayD<f64>, Cache), NnError> {
        match self {
            Layer::Dense(d) => {
                let x = x.into_dimensionality::<Ix2>().map_err(|_| {
                    NnError::Shape("dense layer needs a flattened [batch, features] input".into())
                })?;
                if x.ncols() != d.w.nrows() {
                    return Err(NnError::Shape(format!(
                        "dense input width {} != {} weights rows",
                        x.ncols(),
                        d.w.nrows()
                    )));
                }
                let wscale = d.saturation as f64;
                let bscale = in_scale * wscale;
                let w_eff = scaled(&d.w.clone().into_dyn(), wscale, mode.discrete())
                    .into_dimensionality::<Ix2>()
                    .expect("shape preserved");
                let b_eff = scaled(&d.b.clone().into_dyn(), bscale, mode.discrete());
                let y = x.dot(&w_eff) + &b_eff;
                Ok((
                    y.into_dyn(),
                    Cache::Dense {
                        x,
                        w_eff,
                        wscale,
                        bscale,
                    },
                ))
            }
            Layer::Conv(c) => {
                let x = x.into_dimensionality::<Ix4>().map_err(|_| {
                    NnError::Shape("conv layer needs a [batch, h, w, c] input".into())
                })?;
                let (batch, h, w, cin) = x.dim();
                let (kh, kw, kcin, cout) = c.kernel.dim();
                if cin != kcin {
                    return Err(NnError::Shape(format!(
                        "conv input channels {cin} != kernel channels {kcin}"
                    )));
                }
                let (oh, ow) = window_hw((h, w), (kh, kw), c.strides)?;
                let k = kh * kw * cin;
                let mut patches = Array2::zeros((batch * oh * ow, k));
                for bi in 0..batch {
                    for i in 0..oh {
                        for j in 0..ow {
                            let row = (bi * oh + i) * ow + j;
                            let mut col = 0;
                            for u in 0..kh {
                                for v in 0..kw {
                                    for ch in 0..cin {
                                        patches[[row, col]] =
                                            x[[bi, i * c.strides.0 + u, j * c.strides.1 + v, ch]];
                                        col += 1;
                                    }
                                }
                            }
                        }
                    }
                }
                let wscale = c.saturation as f64;
                let bscale = in_scale * wscale;
                let kmat = scaled(&c.kernel.clone().into_dyn(), wscale, mode.discrete());
                let kmat = Array2::from_shape_vec((k, cout), kmat.iter().copied().collect())
                    .expect("kernel is contiguous");
                let b_eff = scaled(&c.b.clone().into_dyn(), bscale, mode.discrete());
                let y2 = patches.dot(&kmat) + &b_eff;
                let y = y2
                    .into_shape_with_order((batch, oh, ow, cout))
                    .expect("row count matches")
                    .into_dyn();
                Ok((
                    y,
                    Cache::Conv {
                        patches,
                        kmat,
                        in_shape: [batch, h, w, cin],
                        out_hw: (oh, ow),
                        wscale,
                        bscale,
                    },
                ))
            }
            Layer::Square => {
                let y = &x * &x;
                Ok((y, Cache::Square { x }))
            }
            Layer::SumPool { window, strides } => {
                let x = x.into_dimensionality::<Ix4>().map_err(|_| {
                    NnError::Shape("sum pool needs a [batch, h, w, c] input".into())
                })?;
                let (batch, h, w, c) = x.dim();
                let (oh, ow) = window_hw((h, w), *window, *strides)?;
                let mut y = Array4::zeros((batch, oh, ow, c));
                for bi in 0..batch {
                    for i in 0..oh {
                        for j in 0..ow {
                            for u in 0..window.0 {
                                for v in 0..window.1 {
                                    for ch in 0..c {
                                        y[[bi, i, j, ch]] +=
                                            x[[bi, i * strides.0 + u, j * strides.1 + v, ch]];
                                    }
                                }
                            }
                        }
                    }
                }
                Ok((
                    y.into_dyn(),
                    Cache::SumPool {
                        in_shape: vec![batch, h, w, c],
                    },
                ))
            }
            Layer::Flatten => {
                let in_shape = x.shape().to_vec();
                let batch = in_shape[0];
                let rest: usize = in_shape[1..].iter().product();
                let y = x
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((batch, rest))
                    .expect("element count preserved")
                    .into_dyn();
                Ok((y, Cache::Flatten { in_shape }))
            }
            Layer::Gate(g) => {
                let channels = *x.shape().last().expect("activations are never 0-d");
                if channels != g.log_alpha.len() {
                    return Err(NnError::Shape(format!(
                        "{} gates over {channels} channels",
                        g.log_alpha.len()
                    )));
                }
                let (z, dz_dla) = match mode {
                    Mode::Train => {
                        let u = g.sample_noise(rng);
                        let (zc, dz) = g.relaxed(&u);
                        (zc.mapv(round_half_away), dz)
                    }
                    Mode::Surrogate => {
                        let u = g.sample_noise(rng);
                        g.relaxed(&u)
                    }
                    Mode::Eval => (
                        Array1::from_iter(g.inference_mask().iter().map(|&m| m as f64)),
                        Array1::zeros(channels),
                    ),
                };
                let y = &x * &z;
                Ok((y, Cache::Gate { x, z, dz_dla }))
            }
        }
    }

    pub(crate) fn backward(&self, cache: &Cache, dy: ArrayD<f64>) -> (ArrayD<f64>, LayerGrads) {
        match (self, cache) {
            (
                Layer::Dense(_),
                Cache::Dense {
                    x,
                    w_eff,
                    wscale,
                    bscale,
                },
            ) => {
                let dy = dy
                    .into_dimensionality::<Ix2>()
                    .expect("gradient shape matches forward output");
                let dw = x.t().dot(&dy) * *wscale;
                let db = dy.sum_axis(Axis(0)) * *bscale;
                let dx = dy.dot(&w_eff.t());
                (dx.into_dyn(), LayerGrads::Dense { dw, db })
            }
            (
                Layer::Conv(c),
                Cache::Conv {
                    patches,
                    kmat,
                    in_shape,
                    out_hw,
                    wscale,
                    bscale,
                },
            ) => {
                let (kh, kw, cin, cout) = c.kernel.dim();
                let [batch, h, w, _] = *in_shape;
                let (oh, ow) = *out_hw;
                let dy2 = dy
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((batch * oh * ow, cout))
                    .expect("gradient shape matches forward output");
                let dkmat = patches.t().dot(&dy2) * *wscale;
                let dk = Array4::from_shape_vec(
                    (kh, kw, cin, cout),
                    dkmat.iter().copied().collect(),
                )
                .expect("kernel gradient is contiguous");
                let db = dy2.sum_axis(Axis(0)) * *bscale;
                let dpatches = dy2.dot(&kmat.t());
                let mut dx = Array4::zeros((batch, h, w, cin));
                for bi in 0..batch {
                    for i in 0..oh {
                        for j in 0..ow {
                            let row = (bi * oh + i) * ow + j;
                            let mut col = 0;
                            for u in 0..kh {
                                for v in 0..kw {
                                    for ch in 0..cin {
                                        dx[[bi, i * c.strides.0 + u, j * c.strides.1 + v, ch]] +=
                                            dpatches[[row, col]];
                                        col += 1;
                                    }
                                }
                            }
                        }
                    }
                }
                (dx.into_dyn(), LayerGrads::Conv { dk, db })
            }
            (Layer::Square, Cache::Square { x }) => {
                let dx = &dy * x * 2.0;
                (dx, LayerGrads::None)
            }
            (Layer::SumPool { window, strides }, Cache::SumPool { in_shape }) => {
                let dy = dy
                    .into_dimensionality::<Ix4>()
                    .expect("gradient shape matches forward output");
                let (batch, oh, ow, c) = dy.dim();
                let mut dx = Array4::zeros((in_shape[0], in_shape[1], in_shape[2], in_shape[3]));
                for bi in 0..batch {
                    for i in 0..oh {
                        for j in 0..ow {
                            for u in 0..window.0 {
                                for v in 0..window.1 {
                                    for ch in 0..c {
                                        dx[[bi, i * strides.0 + u, j * strides.1 + v, ch]] +=
                                            dy[[bi, i, j, ch]];
                                    }
                                }
                            }
                        }
                    }
                }
                (dx.into_dyn(), LayerGrads::None)
            }
            (Layer::Flatten, Cache::Flatten { in_shape }) => {
                let dx = dy
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(in_shape.as_slice())
                    .expect("element count preserved");
                (dx, LayerGrads::None)
            }
            (Layer::Gate(_), Cache::Gate { x, z, dz_dla }) => {
                let dx = &dy * z;
                let prod = &dy * x;
                // Sum the per-channel contributions over every leading axis.
                let channels = z.len();
                let flat = prod
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((prod.len() / channels, channels))
                    .expect("channels divide the element count");
                let dz = flat.sum_axis(Axis(0));
                let dlog_alpha = &dz * dz_dla;
                (dx, LayerGrads::Gate { dlog_alpha })
            }
            _ => unreachable!("cache kind always matches its layer"),
        }
    }
}
