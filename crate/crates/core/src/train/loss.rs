use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var, BCE_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Bce,
    Dice,
    /// Sum of BCE and dice.
    BceDice,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::Dice => "dice",
            LossKind::BceDice => "bce+dice",
        }
    }

    /// Records the loss on the tape and returns the scalar node.
    pub fn record(self, tape: &mut Tape, prediction: Var, target: &Tensor, smooth: f64) -> Result<Var> {
        match self {
            LossKind::Bce => tape.bce(prediction, target),
            LossKind::Dice => tape.dice(prediction, target, smooth),
            LossKind::BceDice => {
                let b = tape.bce(prediction, target)?;
                let d = tape.dice(prediction, target, smooth)?;
                tape.add(b, d)
            }
        }
    }

    pub fn value(self, prediction: &Tensor, target: &Tensor, smooth: f64) -> Result<f64> {
        match self {
            LossKind::Bce => bce_loss(prediction, target),
            LossKind::Dice => dice_loss(prediction, target, smooth),
            LossKind::BceDice => Ok(bce_loss(prediction, target)? + dice_loss(prediction, target, smooth)?),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "dice" => Ok(LossKind::Dice),
            "bce+dice" => Ok(LossKind::BceDice),
            other => Err(Error::InvalidSpec(format!("unknown loss `{other}` (bce, dice, bce+dice)"))),
        }
    }
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce_loss(p: &Tensor, y: &Tensor) -> Result<f64> {
    p.expect_same_shape(y)?;
    let total: f64 = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / p.len() as f64)
}

/// `1 - (2 sum(p g) + smooth) / (sum p + sum g + smooth)` over the whole
/// tensor.
pub fn dice_loss(p: &Tensor, g: &Tensor, smooth: f64) -> Result<f64> {
    p.expect_same_shape(g)?;
    if !(smooth > 0.0) {
        return Err(Error::InvalidSpec(format!("dice smooth must be > 0, got {smooth}")));
    }
    let inter: f64 = p.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
    Ok(1.0 - (2.0 * inter + smooth) / (p.sum() + g.sum() + smooth))
}
