//! Training-history CSV, comparison tables and overlay images.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{binarize, pnm, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{dice_iou, ClassificationScores, ConfusionCounts};
use crate::nn::ParamAudit;
use crate::tensor::Tensor;
use crate::train::{evaluate_model, History, LossKind};
use crate::zoo::{HeadKind, ModelGraph};

pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const HISTORY_HEADER: &str = "epoch,train_acc,val_acc,train_loss,val_loss,seconds";

/// Serializes a history with six decimals per value.
pub fn history_csv(history: &History) -> Result<String> {
    if history.rows.is_empty() {
        return Err(Error::InvalidSpec("history has no epochs".into()));
    }
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in &history.rows {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.epoch, r.train_acc, r.val_acc, r.train_loss, r.val_loss, r.seconds
        )
        .expect("string write");
    }
    Ok(out)
}

pub fn write_history_csv(history: &History, path: &Path) -> Result<()> {
    let text = history_csv(history)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Foreground pixels with at least one background 4-neighbor. Pixels
/// outside the image count as background.
pub fn contour(mask: &Tensor) -> Result<Vec<bool>> {
    let (h, w) = plane_extent(mask)?;
    let on = |y: isize, x: isize| {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && mask.data()[y as usize * w + x as usize] >= 0.5
    };
    let mut out = vec![false; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            out[y as usize * w + x as usize] =
                on(y, x) && !(on(y - 1, x) && on(y + 1, x) && on(y, x - 1) && on(y, x + 1));
        }
    }
    Ok(out)
}

fn plane_extent(mask: &Tensor) -> Result<(usize, usize)> {
    match *mask.shape() {
        [1, h, w] | [h, w] => Ok((h, w)),
        _ => Err(Error::shape(format!("expected a [1, H, W] mask, got {:?}", mask.shape()))),
    }
}

pub const GT_COLOR: [u8; 3] = [0, 255, 0];
pub const PRED_COLOR: [u8; 3] = [255, 0, 0];
pub const SEPARATOR_COLOR: [u8; 3] = [255, 255, 255];

/// Interleaved 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        pnm::write_rgb(path, self.width, self.height, &self.pixels)
    }
}

fn byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Five panels separated by one white column each: image, ground truth,
/// prediction, image + ground-truth contour (green), image + predicted
/// contour (red).
pub fn overlay_render(image: &Tensor, truth: &Tensor, predicted: &Tensor) -> Result<RgbImage> {
    let (c, h, w) = match *image.shape() {
        [c, h, w] if c == 1 || c == 3 => (c, h, w),
        _ => return Err(Error::shape(format!("expected a [1|3, H, W] image, got {:?}", image.shape()))),
    };
    for m in [truth, predicted] {
        if plane_extent(m)? != (h, w) {
            return Err(Error::shape(format!("mask {:?} does not match image {h}x{w}", m.shape())));
        }
    }
    let base = |y: usize, x: usize| -> [u8; 3] {
        let at = |ch: usize| byte(image.data()[(ch * h + y) * w + x]);
        if c == 1 {
            [at(0); 3]
        } else {
            [at(0), at(1), at(2)]
        }
    };
    let gt_edge = contour(truth)?;
    let pred_edge = contour(predicted)?;
    let width = 5 * w + 4;
    let mut pixels = vec![0u8; 3 * width * h];
    for y in 0..h {
        for panel in 0..5 {
            for x in 0..w {
                let i = y * w + x;
                let rgb = match panel {
                    0 => base(y, x),
                    1 => [byte(truth.data()[i]); 3],
                    2 => [byte(predicted.data()[i]); 3],
                    3 if gt_edge[i] => GT_COLOR,
                    4 if pred_edge[i] => PRED_COLOR,
                    _ => base(y, x),
                };
                let o = 3 * (y * width + panel * (w + 1) + x);
                pixels[o..o + 3].copy_from_slice(&rgb);
            }
            if panel < 4 {
                let o = 3 * (y * width + panel * (w + 1) + w);
                pixels[o..o + 3].copy_from_slice(&SEPARATOR_COLOR);
            }
        }
    }
    Ok(RgbImage {
        width,
        height: h,
        pixels,
    })
}

/// Renders and writes `<case_id>_overlay.ppm` into `dir`.
pub fn write_overlay(dir: &Path, case_id: &str, image: &Tensor, truth: &Tensor, predicted: &Tensor) -> Result<PathBuf> {
    let path = dir.join(format!("{case_id}_overlay.ppm"));
    overlay_render(image, truth, predicted)?.write_ppm(&path)?;
    Ok(path)
}

/// One model's row of the comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub model: String,
    pub head: HeadKind,
    pub train_acc: f64,
    pub val_acc: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Segmenters only: mean per-image Dice and IoU on the validation set.
    pub mean_dice: Option<f64>,
    pub mean_iou: Option<f64>,
    /// Image-level F1 for classifiers, pooled pixel F1 for segmenters.
    pub f1: f64,
    /// Validation images whose truth and prediction were both empty.
    pub empty_pairs: usize,
    pub params: ParamAudit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

pub const REPORT_HEADER: &str = "model,head,train_acc,val_acc,train_loss,val_loss,mean_dice,mean_iou,f1,empty_pairs,total_params,trainable_params,non_trainable_params";

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            let head = match r.head {
                HeadKind::Classifier => "classifier",
                HeadKind::Segmenter => "segmenter",
            };
            writeln!(
                out,
                "{},{head},{:.6},{:.6},{:.6},{:.6},{},{},{:.6},{},{},{},{}",
                r.model,
                r.train_acc,
                r.val_acc,
                r.train_loss,
                r.val_loss,
                opt(r.mean_dice),
                opt(r.mean_iou),
                r.f1,
                r.empty_pairs,
                r.params.total,
                r.params.trainable,
                r.params.non_trainable
            )
            .expect("string write");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    /// Segmenter loss for the loss columns; classifiers always use BCE.
    pub loss: LossKind,
    pub dice_smooth: f64,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            loss: LossKind::BceDice,
            dice_smooth: 1.0,
            batch_size: 8,
        }
    }
}

/// Evaluates each `(name, model)` in eval mode on both splits.
pub fn evaluate(models: &[(&str, &ModelGraph)], train: &Dataset, val: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(models.len());
    for &(name, model) in models {
        let tr = evaluate_model(model, train, opts.loss, opts.dice_smooth, opts.batch_size)?;
        let va = evaluate_model(model, val, opts.loss, opts.dice_smooth, opts.batch_size)?;
        let (mean_dice, mean_iou, f1, empty_pairs) = val_overlap(model, val, opts.batch_size)?;
        rows.push(EvalRow {
            model: name.to_string(),
            head: model.head,
            train_acc: tr.accuracy,
            val_acc: va.accuracy,
            train_loss: tr.loss,
            val_loss: va.loss,
            mean_dice,
            mean_iou,
            f1,
            empty_pairs,
            params: model.param_count(),
        });
    }
    Ok(EvalReport { rows })
}

type Overlaps = (Option<f64>, Option<f64>, f64, usize);

fn val_overlap(model: &ModelGraph, val: &Dataset, batch_size: usize) -> Result<Overlaps> {
    let indices: Vec<usize> = (0..val.len()).collect();
    let mut counts = ConfusionCounts::default();
    let (mut dice, mut iou, mut empty) = (0.0, 0.0, 0);
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = val.batch(chunk)?;
        let out = model.forward(&model.input.adapt(&batch.images)?)?;
        match model.head {
            HeadKind::Classifier => {
                let pred = (0..chunk.len()).map(|i| out.data()[2 * i + 1] >= 0.5);
                let truth = batch.labels.iter().copied();
                counts = counts + ConfusionCounts::tally(pred, truth);
            }
            HeadKind::Segmenter => {
                for i in 0..chunk.len() {
                    let pred = binarize(&out.sample(i)?, 0.5);
                    let truth = batch.masks.sample(i)?;
                    let o = dice_iou(&pred, &truth)?;
                    dice += o.dice;
                    iou += o.iou;
                    empty += usize::from(o.both_empty);
                    counts = counts
                        + ConfusionCounts::tally(
                            pred.data().iter().map(|&v| v == 1.0),
                            truth.data().iter().map(|&v| v == 1.0),
                        );
                }
            }
        }
    }
    let f1 = ClassificationScores::from_counts(counts).f1;
    Ok(match model.head {
        HeadKind::Classifier => (None, None, f1, 0),
        HeadKind::Segmenter => {
            let n = val.len() as f64;
            (Some(dice / n), Some(iou / n), f1, empty)
        }
    })
}
