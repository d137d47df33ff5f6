//! Reproducible experiments built from the public API: the overfit check
//! and the transfer-learning comparison.

use std::fmt::Write as _;

use crate::data::{synth_dataset, ShapeFamily, SynthParams};
use crate::error::Result;
use crate::tensor::Tensor;
use crate::train::{freeze, train, AugmentPolicy, FreezeSelector, History, TrainConfig, Trainer};
use crate::zoo::{build_resunet_segmenter, ChannelSequence, ModelGraph, ResUNetConfig};

fn lesions(seed: u64, n: usize, size: (usize, usize), shape: ShapeFamily) -> Result<crate::data::Dataset> {
    let p = SynthParams {
        image_size: size,
        tumor_probability: 1.0,
        shape,
        ..SynthParams::default()
    };
    synth_dataset(seed, n, &p)
}

fn resunet(size: (usize, usize), channels: &ChannelSequence, seed: u64) -> Result<ModelGraph> {
    build_resunet_segmenter(&ResUNetConfig {
        input_size: size,
        channels: channels.clone(),
        seed,
        ..ResUNetConfig::default()
    })
}

#[derive(Clone, Debug)]
pub struct OverfitStudy {
    pub image_size: (usize, usize),
    pub samples: usize,
    pub max_epochs: usize,
    pub target_dice: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for OverfitStudy {
    fn default() -> Self {
        Self {
            image_size: (64, 64),
            samples: 8,
            max_epochs: 300,
            target_dice: 0.95,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverfitOutcome {
    /// Mean training Dice of each epoch, in train mode.
    pub dice: Vec<f64>,
    /// One-based epoch that first reached the target.
    pub reached: Option<usize>,
}

impl OverfitStudy {
    /// Trains the full-width ResU-Net on a tiny lesion set without
    /// augmentation until the training Dice reaches the target.
    pub fn run(&self) -> Result<OverfitOutcome> {
        let data = lesions(self.seed, self.samples, self.image_size, ShapeFamily::Ellipse)?;
        let mut model = resunet(self.image_size, &ChannelSequence::default(), self.seed)?;
        let cfg = TrainConfig {
            epochs: self.max_epochs,
            learning_rate: self.learning_rate,
            base_batch_size: self.samples,
            augment: AugmentPolicy::none(),
            seed: self.seed,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&mut model, cfg)?;
        let mut dice = Vec::new();
        for epoch in 1..=self.max_epochs {
            let d = trainer.train_epoch(&data)?.accuracy;
            dice.push(d);
            if d >= self.target_dice {
                return Ok(OverfitOutcome {
                    dice,
                    reached: Some(epoch),
                });
            }
        }
        Ok(OverfitOutcome { dice, reached: None })
    }
}

/// Pretrain on ellipses, then compare a frozen-encoder fine-tune against a
/// from-scratch model on rectangles.
#[derive(Clone, Debug)]
pub struct TransferStudy {
    pub image_size: (usize, usize),
    pub channels: ChannelSequence,
    pub source_samples: usize,
    pub source_val_samples: usize,
    pub source_epochs: usize,
    pub target_samples: usize,
    pub target_val_samples: usize,
    pub max_target_epochs: usize,
    pub target_dice: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TransferStudy {
    fn default() -> Self {
        Self {
            image_size: (64, 64),
            channels: ChannelSequence::default(),
            source_samples: 500,
            source_val_samples: 50,
            source_epochs: 30,
            target_samples: 64,
            target_val_samples: 32,
            max_target_epochs: 30,
            target_dice: 0.80,
            learning_rate: 1e-3,
            batch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferOutcome {
    pub source: History,
    pub fine_tuned: History,
    pub scratch: History,
    /// Names of the tensors frozen for fine-tuning.
    pub frozen: Vec<String>,
    /// Every frozen tensor kept its exact bits through fine-tuning.
    pub frozen_identical: bool,
    /// One-based epoch at which validation Dice first reached the target.
    pub fine_tuned_epochs: Option<usize>,
    pub scratch_epochs: Option<usize>,
}

impl TransferOutcome {
    /// Fine-tuning reached the target no later than training from scratch.
    pub fn transfer_helps(&self) -> bool {
        match (self.fine_tuned_epochs, self.scratch_epochs) {
            (Some(f), Some(s)) => f <= s,
            (Some(_), None) => true,
            (None, _) => false,
        }
    }

    /// `run,epoch,train_acc,val_acc,train_loss,val_loss` for all three runs.
    pub fn histories_csv(&self) -> String {
        let mut out = String::from("run,epoch,train_acc,val_acc,train_loss,val_loss\n");
        for (name, h) in [("source", &self.source), ("fine_tuned", &self.fine_tuned), ("scratch", &self.scratch)] {
            for r in &h.rows {
                writeln!(
                    out,
                    "{name},{},{:.6},{:.6},{:.6},{:.6}",
                    r.epoch, r.train_acc, r.val_acc, r.train_loss, r.val_loss
                )
                .expect("string write");
            }
        }
        out
    }
}

fn epochs_to(history: &History, target: f64) -> Option<usize> {
    history.rows.iter().find(|r| r.val_acc >= target).map(|r| r.epoch)
}

fn snapshot(model: &ModelGraph, names: &[String]) -> Vec<Vec<u64>> {
    names
        .iter()
        .map(|n| {
            let id = model.store().id(n).expect("frozen name exists");
            bits(model.store().value(id))
        })
        .collect()
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

impl TransferStudy {
    fn config(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            learning_rate: self.learning_rate,
            base_batch_size: self.batch_size,
            seed,
            ..TrainConfig::default()
        }
    }

    /// Trains until validation Dice reaches the target or the epoch budget
    /// runs out.
    fn train_until(&self, model: &mut ModelGraph, seed: u64, train: &crate::data::Dataset, val: &crate::data::Dataset) -> Result<History> {
        let mut trainer = Trainer::new(model, self.config(self.max_target_epochs, seed))?;
        for _ in 0..self.max_target_epochs {
            if trainer.run_epoch(train, val)?.val_acc >= self.target_dice {
                break;
            }
        }
        Ok(trainer.finish())
    }

    pub fn run(&self) -> Result<TransferOutcome> {
        let s = self.seed;
        let size = self.image_size;
        let src_train = lesions(s, self.source_samples, size, ShapeFamily::Ellipse)?;
        let src_val = lesions(s + 1, self.source_val_samples, size, ShapeFamily::Ellipse)?;
        let tgt_train = lesions(s + 2, self.target_samples, size, ShapeFamily::Rectangle)?;
        let tgt_val = lesions(s + 3, self.target_val_samples, size, ShapeFamily::Rectangle)?;

        let mut pretrained = resunet(size, &self.channels, s)?;
        let source = train(&mut pretrained, &src_train, &src_val, &self.config(self.source_epochs, s))?;

        let report = freeze(&mut pretrained, &FreezeSelector::AllEncoder)?;
        let before = snapshot(&pretrained, &report.frozen);
        let fine_tuned = self.train_until(&mut pretrained, s + 4, &tgt_train, &tgt_val)?;
        let frozen_identical = snapshot(&pretrained, &report.frozen) == before;

        let mut scratch_model = resunet(size, &self.channels, s + 5)?;
        let scratch = self.train_until(&mut scratch_model, s + 4, &tgt_train, &tgt_val)?;

        Ok(TransferOutcome {
            fine_tuned_epochs: epochs_to(&fine_tuned, self.target_dice),
            scratch_epochs: epochs_to(&scratch, self.target_dice),
            source,
            fine_tuned,
            scratch,
            frozen: report.frozen,
            frozen_identical,
        })
    }
}
