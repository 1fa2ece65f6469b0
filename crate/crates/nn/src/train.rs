//! Training loop: seeded shuffling, minibatch Adam, epoch history.
//!
//! Training is single-threaded and fully determined by the config seed; the
//! only randomness is the shuffle order and the gate noise, both drawn from
//! one ChaCha stream.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{Layer, LayerGrads, Mode};
use crate::loss::softmax_cross_entropy;
use crate::model::{Grads, Sequential};
use crate::optim::Adam;
use crate::NnError;

/// Integer-valued images (leading axis = examples) with class labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: ArrayD<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: ArrayD<f64>, labels: Vec<usize>) -> Result<Self, NnError> {
        if images.ndim() < 2 {
            return Err(NnError::Shape(
                "dataset images need a leading example axis".into(),
            ));
        }
        if images.shape()[0] != labels.len() {
            return Err(NnError::Shape(format!(
                "{} images with {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        let images = images.as_standard_layout().into_owned();
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` examples, in order.
    pub fn take(&self, n: usize) -> Result<Dataset, NnError> {
        let n = n.min(self.len());
        let (x, y) = self.gather(&(0..n).collect::<Vec<_>>());
        Dataset::new(x, y)
    }

    /// Copies the given examples into a fresh batch tensor.
    pub fn gather(&self, idx: &[usize]) -> (ArrayD<f64>, Vec<usize>) {
        let elem: usize = self.images.shape()[1..].iter().product();
        let flat = self.images.as_slice().expect("dataset is standard layout");
        let mut data = Vec::with_capacity(idx.len() * elem);
        for &i in idx {
            data.extend_from_slice(&flat[i * elem..(i + 1) * elem]);
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(&self.images.shape()[1..]);
        let x = ArrayD::from_shape_vec(IxDyn(&shape), data).expect("gathered batch is dense");
        let y = idx.iter().map(|&i| self.labels[i]).collect();
        (x, y)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// L2 pull on dense and conv weights, folded into their gradients.
    /// Keeps exported logit magnitudes modest, which directly shrinks the
    /// plaintext modulus the encrypted pipeline needs.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 10,
            batch_size: 64,
            seed: 1,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.epochs > 0
            && self.batch_size > 0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(NnError::Parameter(format!("bad training config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss (cross-entropy plus gate penalty).
    pub loss: f64,
    /// Training accuracy from the train-mode forward passes.
    pub accuracy: f64,
}

/// Full training loss (cross-entropy plus the expected-L0 penalty), the
/// batch logits, and gradients for every parameter.
pub fn loss_and_grads(
    model: &Sequential,
    x: &ArrayD<f64>,
    labels: &[usize],
    mode: Mode,
    rng: &mut ChaCha20Rng,
) -> Result<(f64, Array2<f64>, Grads), NnError> {
    let (logits, caches) = model.forward_full(x, mode, rng)?;
    let (ce, dlogits) = softmax_cross_entropy(&logits, labels)?;
    let loss = ce + model.l0_penalty();
    let mut grads = model.backward_full(&caches, dlogits);
    model.add_penalty_grads(&mut grads);
    Ok((loss, logits, grads))
}

fn add_weight_decay(model: &Sequential, grads: &mut Grads, wd: f64) {
    for (layer, grad) in model.layers.iter().zip(&mut grads.layers) {
        match (layer, grad) {
            (Layer::Dense(d), LayerGrads::Dense { dw, .. }) => {
                dw.zip_mut_with(&d.w, |g, &w| *g += wd * w);
            }
            (Layer::Conv(c), LayerGrads::Conv { dk, .. }) => {
                dk.zip_mut_with(&c.kernel, |g, &w| *g += wd * w);
            }
            _ => {}
        }
    }
}

fn count_correct(logits: &Array2<f64>, labels: &[usize]) -> usize {
    logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best == y
        })
        .count()
}

pub fn train(
    model: &mut Sequential,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>, NnError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(NnError::Parameter("empty training set".into()));
    }
    let n = data.len();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in idx.chunks(cfg.batch_size) {
            let (x, y) = data.gather(chunk);
            let (loss, logits, mut grads) = loss_and_grads(model, &x, &y, Mode::Train, &mut rng)?;
            if !loss.is_finite() {
                return Err(NnError::TrainingDiverged { epoch });
            }
            if cfg.weight_decay > 0.0 {
                add_weight_decay(model, &mut grads, cfg.weight_decay);
            }
            adam.step(model, &grads);
            loss_sum += loss * chunk.len() as f64;
            correct += count_correct(&logits, &y);
        }
        history.push(EpochStats {
            epoch,
            loss: loss_sum / n as f64,
            accuracy: correct as f64 / n as f64,
        });
    }
    Ok(history)
}

/// Eval-mode classification accuracy.
pub fn evaluate(model: &Sequential, data: &Dataset, batch_size: usize) -> Result<f64, NnError> {
    if data.is_empty() {
        return Err(NnError::Parameter("empty evaluation set".into()));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = data.gather(chunk);
        let logits = model.predict(&x)?;
        correct += count_correct(&logits, &y);
    }
    Ok(correct as f64 / data.len() as f64)
}
