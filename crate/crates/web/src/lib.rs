//! Browser demo bindings: synthetic lesion samples, a small residual U-Net
//! trained in the page, its uncertainty map and overlay, and the
//! confidence gate of the classify-then-segment router.

use mriseg::data::{binarize, synth_dataset, Dataset, ShapeFamily, SynthParams};
use mriseg::metrics::dice_iou;
use mriseg::pipeline::{route_predict, Classifier, Segmenter, MASK_THRESHOLD};
use mriseg::report::overlay_render;
use mriseg::train::{AugmentPolicy, Trainer, TrainConfig};
use mriseg::zoo::{build_resunet_segmenter, ChannelSequence, ModelGraph, ResUNetConfig};
use mriseg::{Result, Tensor};
use wasm_bindgen::prelude::*;

pub const SIDE: usize = 32;

fn js(e: mriseg::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn gray_rgba(plane: &[f64]) -> Vec<u8> {
    plane
        .iter()
        .flat_map(|&v| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

/// Blue-to-yellow ramp for probabilities.
fn heat_rgba(plane: &[f64]) -> Vec<u8> {
    plane
        .iter()
        .flat_map(|&p| {
            let p = p.clamp(0.0, 1.0);
            [(255.0 * p) as u8, (200.0 * p) as u8, (255.0 * (1.0 - p)) as u8, 255]
        })
        .collect()
}

fn params(shape: &str) -> Result<SynthParams> {
    Ok(SynthParams {
        image_size: (SIDE, SIDE),
        tumor_probability: 1.0,
        shape: shape.parse::<ShapeFamily>()?,
        ..SynthParams::default()
    })
}

/// A classifier that always answers with a fixed tumor probability.
struct Fixed(f64);

impl Classifier for Fixed {
    fn p_tumor(&self, _: &Tensor) -> Result<f64> {
        Ok(self.0)
    }
}

#[wasm_bindgen]
pub struct Demo {
    model: ModelGraph,
    train_set: Dataset,
    trainer_cfg: TrainConfig,
    epochs_done: usize,
    image: Tensor,
    mask: Tensor,
}

#[wasm_bindgen]
impl Demo {
    /// Builds the model and a 16-sample training set of `shape` lesions.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, shape: &str) -> std::result::Result<Demo, JsError> {
        Self::create(seed as u64, shape).map_err(js)
    }

    fn create(seed: u64, shape: &str) -> Result<Demo> {
        let model = build_resunet_segmenter(&ResUNetConfig {
            input_size: (SIDE, SIDE),
            channels: ChannelSequence::new(vec![6, 12, 24, 12, 6])?,
            se_ratio: Some(2),
            seed,
            ..ResUNetConfig::default()
        })?;
        let train_set = synth_dataset(seed, 16, &params(shape)?)?;
        let first = train_set.samples[0].clone();
        Ok(Demo {
            model,
            train_set,
            trainer_cfg: TrainConfig {
                learning_rate: 1e-2,
                base_batch_size: 4,
                augment: AugmentPolicy::none(),
                seed,
                ..TrainConfig::default()
            },
            epochs_done: 0,
            image: first.image,
            mask: first.mask,
        })
    }

    pub fn side(&self) -> usize {
        SIDE
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// Draws a fresh held-out sample to segment.
    pub fn sample(&mut self, seed: u32, shape: &str) -> std::result::Result<(), JsError> {
        let ds = synth_dataset(1_000_003 + seed as u64, 1, &params(shape).map_err(js)?).map_err(js)?;
        let s = ds.samples.into_iter().next().expect("one sample");
        self.image = s.image;
        self.mask = s.mask;
        Ok(())
    }

    /// Runs `epochs` training epochs; returns the mean training Dice of the
    /// last one.
    pub fn train(&mut self, epochs: usize) -> std::result::Result<f64, JsError> {
        let mut cfg = self.trainer_cfg.clone();
        cfg.seed = self.trainer_cfg.seed + self.epochs_done as u64;
        let mut trainer = Trainer::new(&mut self.model, cfg).map_err(js)?;
        let mut dice = 0.0;
        for _ in 0..epochs {
            dice = trainer.train_epoch(&self.train_set).map_err(js)?.accuracy;
        }
        drop(trainer);
        self.model.set_mode(mriseg::nn::Mode::Eval);
        self.epochs_done += epochs;
        Ok(dice)
    }

    pub fn image_rgba(&self) -> Vec<u8> {
        gray_rgba(self.image.data())
    }

    pub fn mask_rgba(&self) -> Vec<u8> {
        gray_rgba(self.mask.data())
    }

    /// Per-pixel tumor probability of the current sample as a heat map.
    pub fn uncertainty_rgba(&self) -> std::result::Result<Vec<u8>, JsError> {
        let map = self.model.probability_map(&self.image).map_err(js)?;
        Ok(heat_rgba(map.data()))
    }

    /// Five-panel overlay (image, truth, prediction, truth contour, predicted
    /// contour) as RGBA, `5 * side + 4` pixels wide.
    pub fn overlay_rgba(&self) -> std::result::Result<Vec<u8>, JsError> {
        let map = self.model.probability_map(&self.image).map_err(js)?;
        let pred = binarize(&map, MASK_THRESHOLD);
        let rgb = overlay_render(&self.image, &self.mask, &pred).map_err(js)?;
        Ok(rgb.pixels.chunks(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect())
    }

    /// Dice of the current prediction against the sample's mask.
    pub fn dice(&self) -> std::result::Result<f64, JsError> {
        let map = self.model.probability_map(&self.image).map_err(js)?;
        let o = dice_iou(&binarize(&map, MASK_THRESHOLD), &self.mask).map_err(js)?;
        Ok(o.dice)
    }

    /// Routes the current sample given a classifier probability and gate.
    /// Returns 0 when gated out, 1 when segmented with a lesion, 2 when
    /// segmented but the mask came back empty.
    pub fn route(&self, p_tumor: f64, gate: f64) -> std::result::Result<u8, JsError> {
        let p = route_predict(&Fixed(p_tumor), &self.model as &dyn Segmenter, "demo", &self.image, gate).map_err(js)?;
        Ok(match (p.routed, p.tumor) {
            (false, _) => 0,
            (true, true) => 1,
            (true, false) => 2,
        })
    }
}

/// Gate decision alone: true when the image goes to the segmenter.
#[wasm_bindgen]
pub fn routes_to_segmenter(p_tumor: f64, gate: f64) -> bool {
    1.0 - p_tumor < gate
}
