//! Classification and mask-overlap scores.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn tally(predicted: impl IntoIterator<Item = bool>, truth: impl IntoIterator<Item = bool>) -> Self {
        let mut c = Self::default();
        for (p, t) in predicted.into_iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

/// Scores for the positive (tumor) class. A ratio with a zero denominator
/// is reported as 0 and flagged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassificationScores {
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl ClassificationScores {
    pub fn from_counts(c: ConfusionCounts) -> Self {
        let (accuracy, _) = ratio(c.tp + c.tn, c.total());
        let (precision, precision_undefined) = ratio(c.tp, c.tp + c.fp);
        let (recall, recall_undefined) = ratio(c.tp, c.tp + c.fn_);
        // 2PR/(P+R) written over counts so that it is exact
        let (f1, f1_undefined) = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
        Self {
            counts: c,
            accuracy,
            precision,
            recall,
            f1,
            precision_undefined,
            recall_undefined,
            f1_undefined,
        }
    }
}

pub fn classification_scores(predicted: &[bool], truth: &[bool]) -> Result<ClassificationScores> {
    if predicted.len() != truth.len() {
        return Err(Error::Metrics(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Metrics("no items to score".into()));
    }
    let counts = ConfusionCounts::tally(predicted.iter().copied(), truth.iter().copied());
    Ok(ClassificationScores::from_counts(counts))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Overlap {
    pub dice: f64,
    pub iou: f64,
    /// Both masks empty; dice and iou are 1 by convention.
    pub both_empty: bool,
}

/// Dice and IoU of two binary masks of equal shape.
pub fn dice_iou(a: &Tensor, b: &Tensor) -> Result<Overlap> {
    if a.shape() != b.shape() {
        return Err(Error::Metrics(format!("mask shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    let binary = |t: &Tensor| t.data().iter().all(|&v| v == 0.0 || v == 1.0);
    if !binary(a) || !binary(b) {
        return Err(Error::Metrics("masks must be binary".into()));
    }
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x == 1.0, y == 1.0);
        inter += usize::from(x && y);
        na += usize::from(x);
        nb += usize::from(y);
    }
    if na + nb == 0 {
        return Ok(Overlap {
            dice: 1.0,
            iou: 1.0,
            both_empty: true,
        });
    }
    Ok(Overlap {
        dice: (2 * inter) as f64 / (na + nb) as f64,
        iou: inter as f64 / (na + nb - inter) as f64,
        both_empty: false,
    })
}

/// Mean per-image Dice of `[N, 1, H, W]` probability maps thresholded at
/// 0.5 against binary targets.
pub fn mean_dice(probabilities: &Tensor, targets: &Tensor) -> Result<f64> {
    if probabilities.shape() != targets.shape() || probabilities.ndim() != 4 {
        return Err(Error::Metrics(format!(
            "prediction {:?} and target {:?} must be equal [N, 1, H, W]",
            probabilities.shape(),
            targets.shape()
        )));
    }
    let n = probabilities.shape()[0];
    let mut total = 0.0;
    for i in 0..n {
        let p = probabilities.sample(i)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        total += dice_iou(&p, &targets.sample(i)?)?.dice;
    }
    Ok(total / n as f64)
}
