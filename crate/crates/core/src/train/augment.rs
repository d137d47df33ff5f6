use rand::Rng;

use crate::data::Sample;
use crate::error::Result;
use crate::tensor::Tensor;

/// Label-consistent augmentation: flips apply to image and mask alike,
/// intensity jitter to the image only.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPolicy {
    pub hflip: f64,
    pub vflip: f64,
    pub scale: (f64, f64),
    pub shift: (f64, f64),
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            hflip: 0.5,
            vflip: 0.5,
            scale: (0.9, 1.1),
            shift: (-0.05, 0.05),
        }
    }
}

impl AugmentPolicy {
    pub fn none() -> Self {
        Self {
            hflip: 0.0,
            vflip: 0.0,
            scale: (1.0, 1.0),
            shift: (0.0, 0.0),
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::none()
    }
}

fn flip(t: &Tensor, horizontal: bool) -> Tensor {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = if horizontal { (y, w - 1 - x) } else { (h - 1 - y, x) };
                out.push(src[(ch * h + sy) * w + sx]);
            }
        }
    }
    Tensor::new(s.to_vec(), out).expect("same shape")
}

/// Mirrors a `[C, H, W]` tensor left to right.
pub fn hflip(t: &Tensor) -> Tensor {
    flip(t, true)
}

/// Mirrors a `[C, H, W]` tensor top to bottom.
pub fn vflip(t: &Tensor) -> Tensor {
    flip(t, false)
}

pub fn augment<R: Rng + ?Sized>(sample: &Sample, rng: &mut R, policy: &AugmentPolicy) -> Result<Sample> {
    let mut out = sample.clone();
    if policy.is_identity() {
        return Ok(out);
    }
    if rng.gen_bool(policy.hflip) {
        out.image = hflip(&out.image);
        out.mask = hflip(&out.mask);
    }
    if rng.gen_bool(policy.vflip) {
        out.image = vflip(&out.image);
        out.mask = vflip(&out.mask);
    }
    let uniform = |rng: &mut R, (lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let a = uniform(rng, policy.scale);
    let b = uniform(rng, policy.shift);
    if a != 1.0 || b != 0.0 {
        out.image = out.image.map(|v| (v * a + b).clamp(0.0, 1.0));
    }
    Ok(out)
}
