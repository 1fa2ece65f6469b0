//! Adam over the float shadow parameters.

use crate::layers::{Layer, LayerGrads};
use crate::model::{Grads, Sequential};

struct State {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl State {
    fn new(len: usize) -> Self {
        State {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    /// One moment pair per parameter tensor, in layer order (weights before
    /// biases).
    states: Vec<State>,
}

impl Adam {
    pub fn new(model: &Sequential, learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let mut states = Vec::new();
        for layer in &model.layers {
            match layer {
                Layer::Dense(d) => {
                    states.push(State::new(d.w.len()));
                    states.push(State::new(d.b.len()));
                }
                Layer::Conv(c) => {
                    states.push(State::new(c.kernel.len()));
                    states.push(State::new(c.b.len()));
                }
                Layer::Gate(g) => states.push(State::new(g.log_alpha.len())),
                _ => {}
            }
        }
        Adam {
            learning_rate,
            beta1,
            beta2,
            eps,
            t: 0,
            states,
        }
    }

    fn update(&mut self, idx: usize, params: &mut [f64], grads: &[f64], step_size: f64) {
        let st = &mut self.states[idx];
        debug_assert_eq!(params.len(), grads.len());
        debug_assert_eq!(params.len(), st.m.len());
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(st.m.iter_mut().zip(&mut st.v))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= step_size * *m / (v.sqrt() + self.eps);
        }
    }

    pub fn step(&mut self, model: &mut Sequential, grads: &Grads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step_size = self.learning_rate * bc2.sqrt() / bc1;
        let mut idx = 0;
        for (layer, grad) in model.layers.iter_mut().zip(&grads.layers) {
            match (layer, grad) {
                (Layer::Dense(d), LayerGrads::Dense { dw, db }) => {
                    self.update(
                        idx,
                        d.w.as_slice_mut().expect("weights are contiguous"),
                        dw.as_slice().expect("gradients are contiguous"),
                        step_size,
                    );
                    self.update(
                        idx + 1,
                        d.b.as_slice_mut().expect("bias is contiguous"),
                        db.as_slice().expect("gradients are contiguous"),
                        step_size,
                    );
                    idx += 2;
                }
                (Layer::Conv(c), LayerGrads::Conv { dk, db }) => {
                    self.update(
                        idx,
                        c.kernel.as_slice_mut().expect("kernel is contiguous"),
                        dk.as_slice().expect("gradients are contiguous"),
                        step_size,
                    );
                    self.update(
                        idx + 1,
                        c.b.as_slice_mut().expect("bias is contiguous"),
                        db.as_slice().expect("gradients are contiguous"),
                        step_size,
                    );
                    idx += 2;
                }
                (Layer::Gate(g), LayerGrads::Gate { dlog_alpha }) => {
                    self.update(
                        idx,
                        g.log_alpha.as_slice_mut().expect("gates are contiguous"),
                        dlog_alpha.as_slice().expect("gradients are contiguous"),
                        step_size,
                    );
                    idx += 1;
                }
                _ => {}
            }
        }
    }
}
