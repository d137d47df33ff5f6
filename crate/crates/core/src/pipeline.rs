//! Two-stage prediction: a classifier gate followed by conditional
//! segmentation.
//!
//! An image is gated out as no-tumor when the classifier's no-tumor
//! probability `1 - p` is at least the gate threshold (ties gate out).
//! Otherwise the segmenter runs exactly once; its raw sigmoid output is the
//! uncertainty map and the mask is that map binarized at 0.5. An empty mask
//! downgrades the label to no-tumor while keeping `routed = true`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::data::{binarize, pnm, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::zoo::{HeadKind, ModelGraph};

pub const DEFAULT_GATE: f64 = 0.99;
pub const MASK_THRESHOLD: f64 = 0.5;
pub const PREDICTIONS_FILE: &str = "predictions.csv";

/// Anything producing a tumor probability for a `[C, H, W]` image.
pub trait Classifier {
    fn p_tumor(&self, image: &Tensor) -> Result<f64>;
}

/// Anything producing a `[1, H, W]` probability map for a `[C, H, W]` image.
pub trait Segmenter {
    fn probability_map(&self, image: &Tensor) -> Result<Tensor>;
}

fn as_batch(model: &ModelGraph, image: &Tensor, want: HeadKind) -> Result<Tensor> {
    if model.head != want {
        return Err(Error::InvalidSpec(format!("{} does not have a {want:?} head", model.name())));
    }
    if image.ndim() != 3 {
        return Err(Error::shape(format!("expected a [C, H, W] image, got {:?}", image.shape())));
    }
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    model.input.adapt(&image.reshape(shape)?)
}

impl Classifier for ModelGraph {
    fn p_tumor(&self, image: &Tensor) -> Result<f64> {
        let out = self.forward(&as_batch(self, image, HeadKind::Classifier)?)?;
        Ok(out.data()[1])
    }
}

impl Segmenter for ModelGraph {
    fn probability_map(&self, image: &Tensor) -> Result<Tensor> {
        let out = self.forward(&as_batch(self, image, HeadKind::Segmenter)?)?;
        let (_, _, h, w) = out.dims4()?;
        out.reshape([1, h, w])
    }
}

/// Wraps a segmenter and counts how often it is invoked.
pub struct Counting<S> {
    inner: S,
    calls: AtomicUsize,
}

impl<S> Counting<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl<S: Segmenter> Segmenter for Counting<S> {
    fn probability_map(&self, image: &Tensor) -> Result<Tensor> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.probability_map(image)
    }
}

/// Tumor probability of one image.
pub fn classify<C: Classifier + ?Sized>(classifier: &C, image: &Tensor) -> Result<f64> {
    let p = classifier.p_tumor(image)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::NonFinite(format!("classifier probability {p}")));
    }
    Ok(p)
}

/// Un-thresholded per-pixel probability map.
pub fn uncertainty_map<S: Segmenter + ?Sized>(segmenter: &S, image: &Tensor) -> Result<Tensor> {
    segmenter.probability_map(image)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub case_id: String,
    pub p_tumor: f64,
    pub routed: bool,
    /// Final label after both stages.
    pub tumor: bool,
    pub mask: Option<Tensor>,
    pub uncertainty: Option<Tensor>,
    pub threshold: f64,
}

impl Prediction {
    pub fn label(&self) -> &'static str {
        if self.tumor {
            "tumor"
        } else {
            "no-tumor"
        }
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(format!("prediction {}: {m}", self.case_id)));
        if self.mask.is_some() != self.routed {
            return bad("mask present iff routed");
        }
        if let Some(u) = &self.uncertainty {
            if !u.data().iter().all(|v| (0.0..=1.0).contains(v)) {
                return bad("uncertainty outside [0, 1]");
            }
        }
        if let Some(m) = &self.mask {
            if !m.data().iter().all(|&v| v == 0.0 || v == 1.0) {
                return bad("mask not binary");
            }
            if let Some(u) = &self.uncertainty {
                if &binarize(u, MASK_THRESHOLD) != m {
                    return bad("mask differs from the binarized map");
                }
            }
            if self.tumor != m.data().contains(&1.0) {
                return bad("label disagrees with mask");
            }
        } else if self.tumor {
            return bad("gated-out image labeled tumor");
        }
        Ok(())
    }
}

/// Runs the gate and, when not confident, the segmenter.
pub fn route_predict<C, S>(classifier: &C, segmenter: &S, case_id: &str, image: &Tensor, gate: f64) -> Result<Prediction>
where
    C: Classifier + ?Sized,
    S: Segmenter + ?Sized,
{
    if !(0.0..=1.0).contains(&gate) {
        return Err(Error::Config {
            key: "threshold".into(),
            message: format!("gate threshold {gate} outside [0, 1]"),
        });
    }
    let p = classify(classifier, image)?;
    if 1.0 - p >= gate {
        return Ok(Prediction {
            case_id: case_id.to_string(),
            p_tumor: p,
            routed: false,
            tumor: false,
            mask: None,
            uncertainty: None,
            threshold: gate,
        });
    }
    let map = uncertainty_map(segmenter, image)?;
    let mask = binarize(&map, MASK_THRESHOLD);
    Ok(Prediction {
        case_id: case_id.to_string(),
        p_tumor: p,
        routed: true,
        tumor: mask.data().contains(&1.0),
        mask: Some(mask),
        uncertainty: Some(map),
        threshold: gate,
    })
}

/// Routes every sample of a dataset, in dataset order.
pub fn predict_dataset<C, S>(classifier: &C, segmenter: &S, data: &Dataset, gate: f64) -> Result<Vec<Prediction>>
where
    C: Classifier + ?Sized,
    S: Segmenter + ?Sized,
{
    data.samples
        .iter()
        .map(|s| route_predict(classifier, segmenter, &s.case_id, &s.image, gate))
        .collect()
}

/// Writes `predictions.csv` and one `masks/<case_id>_pred.pgm` per routed
/// image under `dir`. Returns the CSV path.
pub fn write_predictions(predictions: &[Prediction], dir: &Path) -> Result<PathBuf> {
    let masks = dir.join("masks");
    fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
    let mut csv = String::from("case_id,p_tumor,routed,label,mask_path\n");
    for p in predictions {
        let mask_path = match &p.mask {
            Some(m) => {
                let rel = format!("masks/{}_pred.pgm", p.case_id);
                pnm::write(&dir.join(&rel), m, 255)?;
                rel
            }
            None => String::new(),
        };
        writeln!(csv, "{},{:.6},{},{},{}", p.case_id, p.p_tumor, p.routed, p.label(), mask_path).expect("string write");
    }
    let path = dir.join(PREDICTIONS_FILE);
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build_resunet_segmenter, ChannelSequence, ResUNetConfig};

    struct Fixed(f64);

    impl Classifier for Fixed {
        fn p_tumor(&self, _: &Tensor) -> Result<f64> {
            Ok(self.0)
        }
    }

    /// Map equal to the image's first channel.
    struct Echo;

    impl Segmenter for Echo {
        fn probability_map(&self, image: &Tensor) -> Result<Tensor> {
            let (h, w) = (image.shape()[1], image.shape()[2]);
            Tensor::new([1, h, w], image.data()[..h * w].to_vec())
        }
    }

    fn image() -> Tensor {
        Tensor::new([1, 2, 2], vec![0.1, 0.7, 0.5, 0.2]).unwrap()
    }

    #[test]
    fn confident_no_tumor_is_gated_out() {
        let seg = Counting::new(Echo);
        let p = route_predict(&Fixed(0.005), &seg, "a", &image(), DEFAULT_GATE).unwrap();
        assert!(!p.routed && !p.tumor && p.mask.is_none());
        assert_eq!(seg.calls(), 0);
        p.validate().unwrap();
    }

    #[test]
    fn uncertain_images_are_segmented_once() {
        let seg = Counting::new(Echo);
        let p = route_predict(&Fixed(0.5), &seg, "a", &image(), DEFAULT_GATE).unwrap();
        assert!(p.routed && p.tumor);
        assert_eq!(seg.calls(), 1);
        assert_eq!(p.mask.as_ref().unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);
        p.validate().unwrap();
    }

    #[test]
    fn tie_gates_out_and_empty_mask_downgrades() {
        let seg = Counting::new(Echo);
        // 1 - 0.25 == 0.75 exactly.
        assert!(!route_predict(&Fixed(0.25), &seg, "a", &image(), 0.75).unwrap().routed);
        let dark = Tensor::full([1, 2, 2], 0.1);
        let p = route_predict(&Fixed(0.9), &seg, "b", &dark, DEFAULT_GATE).unwrap();
        assert!(p.routed && !p.tumor);
        p.validate().unwrap();
    }

    #[test]
    fn gate_bounds() {
        let seg = Echo;
        // Softmax never emits exactly 0, so theta = 1 routes every real image.
        assert!(route_predict(&Fixed(1e-12), &seg, "a", &image(), 1.0).unwrap().routed);
        assert!(!route_predict(&Fixed(0.999), &seg, "a", &image(), 0.0).unwrap().routed);
        // 1 - 1 = 0 ties the gate, so theta = 0 gates out everything.
        assert!(!route_predict(&Fixed(1.0), &seg, "a", &image(), 0.0).unwrap().routed);
        assert!(route_predict(&Fixed(0.5), &seg, "a", &image(), 1.5).is_err());
        assert!(route_predict(&Fixed(f64::NAN), &seg, "a", &image(), 0.5).is_err());
    }

    #[test]
    fn model_graph_backends() {
        let mut m = build_resunet_segmenter(&ResUNetConfig {
            input_size: (8, 8),
            channels: ChannelSequence::new(vec![4, 8, 4]).unwrap(),
            se_ratio: None,
            seed: 1,
            ..ResUNetConfig::default()
        })
        .unwrap();
        let id = m.store().id("head.conv.weight").unwrap();
        m.store_mut().value_mut(id).data_mut().fill(0.0);
        let id = m.store().id("head.conv.bias").unwrap();
        m.store_mut().value_mut(id).data_mut().fill(0.0);
        let img = Tensor::full([1, 8, 8], 0.3);
        let map = uncertainty_map(&m, &img).unwrap();
        assert_eq!(map.shape(), &[1, 8, 8]);
        assert!(map.data().iter().all(|&v| v == 0.5));
        assert!(classify(&m, &img).is_err());
    }
}
