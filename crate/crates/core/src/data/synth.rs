//! Seeded synthetic lesion images: a textured elliptical "head" with one
//! bright lesion on positive samples.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{DataSource, Dataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeFamily {
    Ellipse,
    Rectangle,
    /// Union of three overlapping discs.
    Blob,
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeFamily::Ellipse => "ellipse",
            ShapeFamily::Rectangle => "rectangle",
            ShapeFamily::Blob => "blob",
        })
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ellipse" => Ok(ShapeFamily::Ellipse),
            "rectangle" => Ok(ShapeFamily::Rectangle),
            "blob" => Ok(ShapeFamily::Blob),
            other => Err(Error::InvalidSpec(format!("unknown shape family `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub image_size: (usize, usize),
    pub tumor_probability: f64,
    pub shape: ShapeFamily,
    /// Intensity added inside the lesion.
    pub contrast: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            image_size: (64, 64),
            tumor_probability: 0.5,
            shape: ShapeFamily::Ellipse,
            contrast: 0.45,
            noise: 0.03,
        }
    }
}

enum Lesion {
    Ellipse { cx: f64, cy: f64, ra: f64, rb: f64, theta: f64 },
    Rect { cx: f64, cy: f64, hx: f64, hy: f64 },
    Blob { discs: [(f64, f64, f64); 3] },
}

impl Lesion {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Lesion::Ellipse { cx, cy, ra, rb, theta } => {
                let (dx, dy) = (x - cx, y - cy);
                let (s, c) = theta.sin_cos();
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                (u / ra).powi(2) + (v / rb).powi(2) <= 1.0
            }
            Lesion::Rect { cx, cy, hx, hy } => (x - cx).abs() <= hx && (y - cy).abs() <= hy,
            Lesion::Blob { discs } => discs
                .iter()
                .any(|&(cx, cy, r)| (x - cx).powi(2) + (y - cy).powi(2) <= r * r),
        }
    }
}

fn draw_lesion(rng: &mut ChaCha8Rng, shape: ShapeFamily, h: usize, w: usize) -> Lesion {
    let m = h.min(w) as f64;
    let radius = |rng: &mut ChaCha8Rng| (rng.gen_range(0.07..0.17) * m).max(1.5);
    // lesion centers sit on pixel centers inside the head
    let cx = (w as f64 * rng.gen_range(0.32..0.68)).floor() + 0.5;
    let cy = (h as f64 * rng.gen_range(0.32..0.68)).floor() + 0.5;
    match shape {
        ShapeFamily::Ellipse => Lesion::Ellipse {
            cx,
            cy,
            ra: radius(rng),
            rb: radius(rng),
            theta: rng.gen_range(0.0..PI),
        },
        ShapeFamily::Rectangle => Lesion::Rect {
            cx,
            cy,
            hx: radius(rng),
            hy: radius(rng),
        },
        ShapeFamily::Blob => {
            let r = radius(rng);
            let mut discs = [(cx, cy, r), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)];
            for d in &mut discs[1..] {
                let a = rng.gen_range(0.0..2.0 * PI);
                let off = rng.gen_range(0.2..0.6) * r;
                *d = (cx + off * a.cos(), cy + off * a.sin(), (r * rng.gen_range(0.5..0.9)).max(1.0));
            }
            Lesion::Blob { discs }
        }
    }
}

fn synth_sample(rng: &mut ChaCha8Rng, params: &SynthParams, id: String) -> Result<Sample> {
    let (h, w) = params.image_size;
    let positive = rng.gen_bool(params.tumor_probability);
    let (fx, fy) = (rng.gen_range(0.15..0.45), rng.gen_range(0.15..0.45));
    let (px, py) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
    let base = rng.gen_range(0.3..0.4);
    let lesion = positive.then(|| draw_lesion(rng, params.shape, h, w));
    let noise = Normal::new(0.0, params.noise.max(0.0)).map_err(|e| Error::InvalidSpec(e.to_string()))?;

    let (hcx, hcy, hrx, hry) = (w as f64 / 2.0, h as f64 / 2.0, 0.45 * w as f64, 0.45 * h as f64);
    let mut image = Vec::with_capacity(h * w);
    let mut mask = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside_head = ((xf - hcx) / hrx).powi(2) + ((yf - hcy) / hry).powi(2) <= 1.0;
            let mut v = if inside_head {
                base + 0.08 * (fx * xf + px).sin() * (fy * yf + py).sin()
            } else {
                0.05
            };
            let hit = lesion.as_ref().is_some_and(|l| l.contains(xf, yf));
            if hit {
                v += params.contrast;
            }
            v += noise.sample(rng);
            image.push(v.clamp(0.0, 1.0));
            mask.push(if hit { 1.0 } else { 0.0 });
        }
    }
    Sample::new(id, Tensor::new([1, h, w], image)?, Tensor::new([1, h, w], mask)?)
}

/// `n` samples drawn from one seeded stream, so equal arguments give
/// identical datasets.
pub fn synth_dataset(seed: u64, n: usize, params: &SynthParams) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidSpec("synthetic dataset needs n >= 1".into()));
    }
    if !(0.0..=1.0).contains(&params.tumor_probability) {
        return Err(Error::InvalidSpec(format!(
            "tumor probability {} outside [0, 1]",
            params.tumor_probability
        )));
    }
    let (h, w) = params.image_size;
    if h < 8 || w < 8 {
        return Err(Error::InvalidSpec(format!("image size {h}x{w} is below 8x8")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| synth_sample(&mut rng, params, format!("synth-{i:05}")))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(
        samples,
        DataSource::Synthetic {
            seed,
            params: params.clone(),
        },
    )
}
