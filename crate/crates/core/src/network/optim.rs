//! Cross-entropy loss, SGD with momentum, and the plateau-driven schedule.

use super::model::{Gradients, Model};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits. Logits are `(N, classes, 1, 1)`.
pub fn loss_and_grad<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let n = logits.shape().n();
    let classes = logits.shape().item_len();
    if labels.len() != n {
        return Err(Error::InvalidShape(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut grad = Tensor::zeros(Shape::new(n, classes, 1, 1));
    let mut total = 0.0;
    for (item, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let z: Vec<f64> = logits.item(item).iter().map(|v| v.as_f64()).collect();
        let probs = softmax(&z);
        total -= log_softmax(&z, label);
        let g = grad.item_mut(item);
        for (c, p) in probs.iter().enumerate() {
            let onehot = if c == label { 1.0 } else { 0.0 };
            g[c] = T::from_f64((p - onehot) / n as f64);
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok((total / n as f64, grad))
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax(z: &[f64], k: usize) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z[k] - lse
}

/// One SGD step with L2 weight decay and heavy-ball momentum:
/// `g' = g + wd*p; v = m*v + g'; p -= lr*v`.
pub fn sgd_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    assert_eq!(
        params.len(),
        grads.len(),
        "parameter/gradient length mismatch"
    );
    assert_eq!(
        params.len(),
        velocity.len(),
        "parameter/velocity length mismatch"
    );
    let (lr, m, wd) = (
        T::from_f64(lr),
        T::from_f64(momentum),
        T::from_f64(weight_decay),
    );
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let g = g + wd * *p;
        *v = m * *v + g;
        *p = *p - lr * *v;
    }
}

/// Momentum buffers for every trainable layer of a model.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(model: &Model<T>, momentum: f64, weight_decay: f64) -> Self {
        let velocity = model
            .layers
            .iter()
            .map(|l| {
                l.params()
                    .map(|(w, b)| (vec![T::zero(); w.len()], vec![T::zero(); b.len()]))
            })
            .collect();
        Sgd {
            momentum,
            weight_decay,
            velocity,
        }
    }

    pub fn step(&mut self, model: &mut Model<T>, grads: &Gradients<T>, lr: f64) {
        for ((layer, g), v) in model
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.velocity)
        {
            if let (Some((w, b)), Some(g), Some((vw, vb))) = (layer.params_mut(), g, v.as_mut()) {
                sgd_step(w, &g.weights, vw, lr, self.momentum, self.weight_decay);
                sgd_step(b, &g.bias, vb, lr, self.momentum, self.weight_decay);
            }
        }
    }
}

/// Halves the learning rate once validation loss has failed to improve for
/// `patience` consecutive epochs, then starts counting again.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauHalving {
    pub lr: f64,
    pub patience: usize,
    best: f64,
    stale: usize,
}

impl PlateauHalving {
    pub fn new(lr0: f64, patience: usize) -> Self {
        PlateauHalving {
            lr: lr0,
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Records one epoch's validation loss and returns the learning rate for
    /// the next epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr *= 0.5;
                self.stale = 0;
            }
        }
        self.lr
    }
}

/// Stops once validation accuracy has not improved for `patience` epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::NEG_INFINITY,
            stale: 0,
        }
    }

    /// Returns `(improved, should_stop)`.
    pub fn observe(&mut self, val_acc: f64) -> (bool, bool) {
        if val_acc > self.best {
            self.best = val_acc;
            self.stale = 0;
            (true, false)
        } else {
            self.stale += 1;
            (false, self.stale >= self.patience)
        }
    }
}
