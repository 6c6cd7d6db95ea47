//! Mini-batch training with plateau halving and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::Mode;
use super::model::Model;
use super::optim::{loss_and_grad, EarlyStopping, PlateauHalving, Sgd};
use crate::dataset::{
    augment, split_train_val, AugmentMode, AugmentSpec, LabeledDataset, Preprocess,
};
use crate::error::{Error, Result};
use crate::polar::PolarConfig;
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs without a lower validation loss before the rate is halved.
    pub lr_halve_patience: usize,
    /// Epochs without a higher validation accuracy before stopping.
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentMode,
    pub max_epochs: usize,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.05,
            momentum: 0.9,
            weight_decay: 1e-5,
            lr_halve_patience: 5,
            early_stop_patience: 15,
            batch_size: 64,
            seed: 0,
            augment: AugmentMode::None,
            max_epochs: 200,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr0, self.momentum, self.weight_decay];
        if positive.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.lr0 <= 0.0 {
            return Err(Error::Config(
                "lr0 must be > 0, momentum and weight_decay >= 0".into(),
            ));
        }
        if self.lr_halve_patience == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config(
                "patience values must be at least one epoch".into(),
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch_size and max_epochs must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction {} not in [0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Weights from the epoch with the best validation accuracy.
    pub model: Model<T>,
    pub preprocess: Preprocess,
    pub log: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub loss: f64,
    pub correct: usize,
    pub total: usize,
    /// `(correct, total)` per class.
    pub per_class: Vec<(usize, usize)>,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

fn check_labels<T: Scalar>(model: &Model<T>, ds: &LabeledDataset) -> Result<()> {
    let classes = model.classes();
    match ds.labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

/// Runs the model over `ds` in inference mode.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    preprocess: &Preprocess,
    ds: &LabeledDataset,
    batch_size: usize,
) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_labels(model, ds)?;
    let classes = model.classes();
    let mut report = EvalReport {
        loss: 0.0,
        correct: 0,
        total: 0,
        per_class: vec![(0, 0); classes],
    };
    let mut loss_sum = 0.0;
    for start in (0..ds.len()).step_by(batch_size.max(1)) {
        let end = (start + batch_size.max(1)).min(ds.len());
        let imgs: Vec<_> = ds.images[start..end].iter().collect();
        let labels = &ds.labels[start..end];
        let logits = model.predict(&preprocess.batch::<T>(&imgs)?)?;
        let (loss, _) = loss_and_grad(&logits, labels)?;
        loss_sum += loss * labels.len() as f64;
        for (i, &label) in labels.iter().enumerate() {
            let row = logits.item(i);
            let pred = argmax(row);
            report.per_class[label].1 += 1;
            if pred == label {
                report.correct += 1;
                report.per_class[label].0 += 1;
            }
        }
        report.total += labels.len();
    }
    report.loss = loss_sum / report.total as f64;
    Ok(report)
}

/// Index of the largest value; the first wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(epoch as u64)
}

pub fn train<T: Scalar>(
    model: Model<T>,
    dataset: &LabeledDataset,
    polar: Option<PolarConfig>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with_progress(model, dataset, polar, cfg, |_| {})
}

/// Like [`train`], calling `on_epoch` after each epoch's evaluation.
pub fn train_with_progress<T: Scalar>(
    mut model: Model<T>,
    dataset: &LabeledDataset,
    polar: Option<PolarConfig>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_labels(&model, dataset)?;
    let (train_set, val_set) = split_train_val(dataset, cfg.val_fraction, cfg.seed);
    let val_set = if val_set.is_empty() {
        train_set.clone()
    } else {
        val_set
    };
    let preprocess = Preprocess::fit(&train_set, polar)?;

    let mut sgd = Sgd::new(&model, cfg.momentum, cfg.weight_decay);
    let mut schedule = PlateauHalving::new(cfg.lr0, cfg.lr_halve_patience);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut log = Vec::new();
    let mut lr = cfg.lr0;

    for epoch in 1..=cfg.max_epochs {
        let seed = epoch_seed(cfg.seed, epoch);
        let epoch_set = match cfg.augment {
            AugmentMode::None => None,
            mode => Some(augment(&train_set, AugmentSpec { mode, seed })),
        };
        let epoch_set = epoch_set.as_ref().unwrap_or(&train_set);
        let mut order: Vec<usize> = (0..epoch_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let imgs: Vec<_> = batch.iter().map(|&i| &epoch_set.images[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| epoch_set.labels[i]).collect();
            let x = preprocess.batch::<T>(&imgs)?;
            let (logits, cache) = model.forward(&x, Mode::Train)?;
            let (loss, grad) = loss_and_grad(&logits, &labels)?;
            let grads = model.backward(&cache, &grad)?;
            sgd.step(&mut model, &grads, lr);
            model.commit_running_stats(&cache);
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / epoch_set.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }

        let val = evaluate(&model, &preprocess, &val_set, cfg.batch_size)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss,
            val_loss: val.loss,
            val_acc: val.accuracy(),
            lr,
        };
        on_epoch(&metrics);
        log.push(metrics);

        lr = schedule.observe(val.loss);
        let (improved, stop) = stopper.observe(val.accuracy());
        if improved {
            best = model.clone();
            best_epoch = epoch;
        }
        if stop {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best,
        preprocess,
        log,
        best_epoch,
    })
}

/// Metrics log as CSV with a header row.
pub fn metrics_csv(log: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_acc,lr\n");
    for m in log {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{}\n",
            m.epoch, m.train_loss, m.val_loss, m.val_acc, m.lr
        ));
    }
    out
}
