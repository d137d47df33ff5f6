//! Losses, optimizers, freezing, augmentation and the epoch loop.

mod augment;
mod freeze;
mod loss;
mod optim;

pub use augment::{augment, hflip, vflip, AugmentPolicy};
pub use freeze::{freeze, unfreeze_all, FreezeReport, FreezeSelector};
pub use loss::{bce_loss, dice_loss, LossKind};
pub use optim::{Optimizer, OptimizerKind};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{stack_samples, Batch, Dataset};
use crate::error::{Error, Result};
use crate::metrics::mean_dice;
use crate::nn::Mode;
use crate::tensor::Tensor;
use crate::zoo::{HeadKind, ModelGraph};

/// Numeric mode. Only 64-bit floats are implemented.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("f64")
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f64" => Ok(Precision::F64),
            other => Err(Error::InvalidSpec(format!("precision `{other}` is not supported (f64 only)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub base_batch_size: usize,
    /// Zero-based epoch index from which the grown batch size applies.
    pub batch_growth_epoch: usize,
    pub batch_growth_factor: f64,
    /// Segmenter objective; classifiers always use BCE on the one-hot
    /// target.
    pub loss: LossKind,
    pub dice_smooth: f64,
    pub augment: AugmentPolicy,
    pub seed: u64,
    pub precision: Precision,
    /// Fill the `seconds` history column with wall time. Off by default so
    /// that histories are byte-reproducible.
    pub record_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::adam(),
            base_batch_size: 8,
            batch_growth_epoch: 15,
            batch_growth_factor: 2.0,
            loss: LossKind::BceDice,
            dice_smooth: 1.0,
            augment: AugmentPolicy::default(),
            seed: 0,
            precision: Precision::F64,
            record_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                key: key.into(),
                message,
            })
        };
        if self.epochs == 0 {
            return bad("epochs", "must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("must be > 0, got {}", self.learning_rate));
        }
        if self.base_batch_size == 0 {
            return bad("batch_size", "must be >= 1".into());
        }
        if !(self.batch_growth_factor > 0.0 && self.batch_growth_factor.is_finite()) {
            return bad("batch_growth_factor", format!("must be > 0, got {}", self.batch_growth_factor));
        }
        if !(self.dice_smooth > 0.0) {
            return bad("dice_smooth", format!("must be > 0, got {}", self.dice_smooth));
        }
        Ok(())
    }
}

/// Batch size for a zero-based epoch index.
pub fn batch_schedule(epoch: usize, cfg: &TrainConfig) -> usize {
    if epoch < cfg.batch_growth_epoch {
        cfg.base_batch_size
    } else {
        ((cfg.base_batch_size as f64 * cfg.batch_growth_factor).floor() as usize).max(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    /// One-based epoch number.
    pub epoch: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub model: String,
    /// Loss that produced the loss columns.
    pub loss: String,
    /// What the accuracy columns measure.
    pub accuracy: String,
    pub rows: Vec<HistoryRow>,
}

impl History {
    pub fn last(&self) -> Option<&HistoryRow> {
        self.rows.last()
    }
}

/// Mean accuracy and loss over a dataset pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub accuracy: f64,
    pub loss: f64,
}

fn accuracy_definition(head: HeadKind) -> &'static str {
    match head {
        HeadKind::Classifier => "fraction correct at p_tumor >= 0.5",
        HeadKind::Segmenter => "mean per-image dice at threshold 0.5",
    }
}

fn loss_for(head: HeadKind, cfg_loss: LossKind) -> LossKind {
    match head {
        HeadKind::Classifier => LossKind::Bce,
        HeadKind::Segmenter => cfg_loss,
    }
}

fn target(head: HeadKind, batch: &Batch) -> Tensor {
    match head {
        HeadKind::Classifier => batch.one_hot(),
        HeadKind::Segmenter => batch.masks.clone(),
    }
}

fn batch_accuracy(head: HeadKind, output: &Tensor, batch: &Batch) -> Result<f64> {
    match head {
        HeadKind::Classifier => {
            let correct = output
                .data()
                .chunks(2)
                .zip(&batch.labels)
                .filter(|(p, &l)| (p[1] >= 0.5) == l)
                .count();
            Ok(correct as f64 / batch.labels.len() as f64)
        }
        HeadKind::Segmenter => mean_dice(output, &batch.masks),
    }
}

/// Eval-mode accuracy and loss over `data` in batches of `batch_size`.
pub fn evaluate_model(model: &ModelGraph, data: &Dataset, loss: LossKind, smooth: f64, batch_size: usize) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty dataset".into()));
    }
    let loss = loss_for(model.head, loss);
    let (mut acc, mut total) = (0.0, 0.0);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk)?;
        let out = model.forward(&model.input.adapt(&batch.images)?)?;
        let n = chunk.len() as f64;
        acc += n * batch_accuracy(model.head, &out, &batch)?;
        total += n * loss.value(&out, &target(model.head, &batch), smooth)?;
    }
    let n = data.len() as f64;
    Ok(EpochStats {
        accuracy: acc / n,
        loss: total / n,
    })
}

/// Epoch-at-a-time training driver; [`train`] runs it for the configured
/// number of epochs.
pub struct Trainer<'m> {
    model: &'m mut ModelGraph,
    cfg: TrainConfig,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    history: History,
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m mut ModelGraph, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let history = History {
            model: model.name().to_string(),
            loss: loss_for(model.head, cfg.loss).name().to_string(),
            accuracy: accuracy_definition(model.head).to_string(),
            rows: Vec::new(),
        };
        Ok(Self {
            optimizer: Optimizer::new(cfg.optimizer, cfg.learning_rate),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            model,
            cfg,
            history,
        })
    }

    /// Zero-based index of the next epoch.
    pub fn epoch(&self) -> usize {
        self.history.rows.len()
    }

    pub fn model(&self) -> &ModelGraph {
        self.model
    }

    /// One shuffled pass of optimizer steps. Accuracy and loss are averaged
    /// over the train-mode outputs seen during the pass.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        let epoch = self.epoch();
        let batch_size = batch_schedule(epoch, &self.cfg);
        let head = self.model.head;
        let loss = loss_for(head, self.cfg.loss);
        let smooth = self.cfg.dice_smooth;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        self.model.set_mode(Mode::Train);
        let (mut acc, mut total) = (0.0, 0.0);
        for (b, chunk) in order.chunks(batch_size).enumerate() {
            let samples = chunk
                .iter()
                .map(|&i| augment(&data.samples[i], &mut self.rng, &self.cfg.augment))
                .collect::<Result<Vec<_>>>()?;
            let batch = stack_samples(&samples.iter().collect::<Vec<_>>())?;
            let images = self.model.input.adapt(&batch.images)?;
            let y = target(head, &batch);
            let step = self
                .model
                .loss_and_grads(&images, |tape, out| loss.record(tape, out, &y, smooth))
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::NonFinite(format!("loss at epoch {} batch {}", epoch + 1, b + 1)),
                    other => other,
                })?;
            self.optimizer.step(self.model.store_mut(), &step.grads).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {} batch {}", epoch + 1, b + 1)),
                other => other,
            })?;
            let n = chunk.len() as f64;
            acc += n * batch_accuracy(head, &step.output, &batch)?;
            total += n * step.loss;
        }
        self.model.set_mode(Mode::Eval);
        let n = data.len() as f64;
        Ok(EpochStats {
            accuracy: acc / n,
            loss: total / n,
        })
    }

    /// Trains one epoch, validates in eval mode and records the row.
    pub fn run_epoch(&mut self, train: &Dataset, val: &Dataset) -> Result<HistoryRow> {
        let start = self.cfg.record_time.then(Instant::now);
        let t = self.train_epoch(train)?;
        let v = evaluate_model(self.model, val, self.cfg.loss, self.cfg.dice_smooth, self.cfg.base_batch_size)?;
        let row = HistoryRow {
            epoch: self.epoch() + 1,
            train_acc: t.accuracy,
            val_acc: v.accuracy,
            train_loss: t.loss,
            val_loss: v.loss,
            seconds: start.map_or(0.0, |s| s.elapsed().as_secs_f64()),
        };
        self.history.rows.push(row);
        Ok(row)
    }

    pub fn finish(self) -> History {
        self.model.set_mode(Mode::Eval);
        self.history
    }
}

/// Runs exactly `cfg.epochs` epochs; the model is left in eval mode.
pub fn train(model: &mut ModelGraph, train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<History> {
    if val_set.is_empty() {
        return Err(Error::Dataset("validation set is empty".into()));
    }
    let mut trainer = Trainer::new(model, cfg.clone())?;
    for _ in 0..cfg.epochs {
        trainer.run_epoch(train_set, val_set)?;
    }
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests;
