//! Hard-concrete activity gates with an L0 sparsity penalty.
//!
//! Each gated feature map owns one parameter `log_alpha`. During training a
//! stretched binary-concrete sample z is pushed through a hard sigmoid and
//! rounded to {0,1}, with gradients passing through the rounding unchanged.
//! At inference the gate collapses to `round(hard(log_alpha))`.

use ndarray::Array1;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::{round_half_even, sigmoid, NnError};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct L0Config {
    /// Concrete temperature.
    pub beta: f64,
    /// Lower stretch bound, below zero.
    pub gamma: f64,
    /// Upper stretch bound, above one.
    pub zeta: f64,
    /// Penalty weight per expected-active gate in the training loss.
    pub l0_weight: f64,
}

impl Default for L0Config {
    fn default() -> Self {
        L0Config {
            beta: 2.0 / 3.0,
            gamma: -0.1,
            zeta: 1.1,
            l0_weight: 1e-3,
        }
    }
}

impl L0Config {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.gamma < 0.0 && self.zeta > 1.0 && self.beta > 0.0) {
            return Err(NnError::Parameter(format!(
                "gate constants need gamma < 0 < 1 < zeta and beta > 0, got \
                 beta={} gamma={} zeta={}",
                self.beta, self.gamma, self.zeta
            )));
        }
        if self.l0_weight < 0.0 {
            return Err(NnError::Parameter(format!(
                "l0_weight must be nonnegative, got {}",
                self.l0_weight
            )));
        }
        Ok(())
    }

    /// Stretch of the hard sigmoid, `zeta - gamma`.
    pub(crate) fn spread(&self) -> f64 {
        self.zeta - self.gamma
    }

    /// The constant shift `beta * ln(-gamma / zeta)` inside the expected-L0
    /// sigmoid.
    fn penalty_shift(&self) -> f64 {
        self.beta * (-self.gamma / self.zeta).ln()
    }
}

/// Clamp the stretched sigmoid onto [0, 1].
pub(crate) fn hard(pre_sigmoid: f64, cfg: &L0Config) -> f64 {
    (sigmoid(pre_sigmoid) * cfg.spread() + cfg.gamma).clamp(0.0, 1.0)
}

/// One gate parameter vector covering the channels (last axis) of the
/// tensor it multiplies.
#[derive(Debug, Clone)]
pub struct L0Gate {
    pub log_alpha: Array1<f64>,
    pub cfg: L0Config,
}

impl L0Gate {
    /// Gates start mostly open so early training sees every map.
    pub fn new(channels: usize, cfg: L0Config, rng: &mut ChaCha20Rng) -> Result<Self, NnError> {
        cfg.validate()?;
        if channels == 0 {
            return Err(NnError::Parameter("gate over zero channels".into()));
        }
        let log_alpha =
            Array1::from_shape_fn(channels, |_| 2.3 + rng.random_range(-0.1..0.1));
        Ok(L0Gate { log_alpha, cfg })
    }

    /// Continuous gate values for a fixed noise sample, plus their
    /// derivatives with respect to `log_alpha`. The derivative is zero
    /// wherever the hard sigmoid clamps.
    pub(crate) fn relaxed(&self, u: &[f64]) -> (Array1<f64>, Array1<f64>) {
        let cfg = &self.cfg;
        let mut z = Array1::zeros(self.log_alpha.len());
        let mut dz = Array1::zeros(self.log_alpha.len());
        for (c, (&la, &uc)) in self.log_alpha.iter().zip(u).enumerate() {
            let pre = ((uc / (1.0 - uc)).ln() + la) / cfg.beta;
            let sg = sigmoid(pre);
            let stretched = sg * cfg.spread() + cfg.gamma;
            z[c] = stretched.clamp(0.0, 1.0);
            dz[c] = if (0.0..=1.0).contains(&stretched) {
                sg * (1.0 - sg) * cfg.spread() / cfg.beta
            } else {
                0.0
            };
        }
        (z, dz)
    }

    /// Draw one uniform sample per channel, avoiding the measure-zero
    /// endpoints where the logistic transform is undefined.
    pub(crate) fn sample_noise(&self, rng: &mut ChaCha20Rng) -> Vec<f64> {
        (0..self.log_alpha.len())
            .map(|_| loop {
                let u: f64 = rng.random();
                if u > 0.0 && u < 1.0 {
                    break u;
                }
            })
            .collect()
    }

    /// Expected number of active gates scaled by the penalty weight; added
    /// to the training loss.
    pub fn penalty(&self) -> f64 {
        let shift = self.cfg.penalty_shift();
        self.cfg.l0_weight
            * self
                .log_alpha
                .iter()
                .map(|&la| sigmoid(la - shift))
                .sum::<f64>()
    }

    /// Gradient of `penalty` with respect to each `log_alpha`.
    pub(crate) fn penalty_grad(&self) -> Array1<f64> {
        let shift = self.cfg.penalty_shift();
        self.log_alpha.mapv(|la| {
            let s = sigmoid(la - shift);
            self.cfg.l0_weight * s * (1.0 - s)
        })
    }

    /// Deterministic binary inference mask, `round(hard(log_alpha))` with
    /// ties going to even.
    pub fn inference_mask(&self) -> Vec<u8> {
        self.log_alpha
            .iter()
            .map(|&la| round_half_even(hard(la, &self.cfg)) as u8)
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.inference_mask().iter().filter(|&&g| g == 1).count()
    }
}

/// Single-gate sampling form: z for one noise draw u in (0, 1).
pub fn sample_gate(log_alpha: f64, cfg: &L0Config, u: f64) -> Result<f64, NnError> {
    if !(0.0 < u && u < 1.0) {
        return Err(NnError::Parameter(format!(
            "gate noise must lie strictly inside (0, 1), got {u}"
        )));
    }
    Ok(hard(((u / (1.0 - u)).ln() + log_alpha) / cfg.beta, cfg))
}

/// Expected-L0 penalty over a set of gate parameter vectors.
pub fn l0_penalty(gates: &[&L0Gate]) -> f64 {
    gates.iter().map(|g| g.penalty()).sum()
}

/// Binary masks for every gate vector, in order.
pub fn inference_gates(gates: &[&L0Gate]) -> Vec<Vec<u8>> {
    gates.iter().map(|g| g.inference_mask()).collect()
}
