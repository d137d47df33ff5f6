//! Samples and datasets, image files, resampling, the synthetic lesion
//! generator, splitting and the weights archive.

mod manifest;
pub mod pnm;
mod resize;
mod split;
mod synth;
mod weights;

pub use manifest::{load_dataset, write_dataset, MANIFEST_FILE};
pub use resize::{binarize, normalize_resize, resize_bilinear, resize_mask};
pub use split::split;
pub use synth::{synth_dataset, ShapeFamily, SynthParams};
pub use weights::{load_weights, save_weights, save_weights_subset, LoadMode, LoadReport, ARCHIVE_MAGIC, ARCHIVE_VERSION};

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One image with its lesion mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub case_id: String,
    /// `[C, H, W]` with C in {1, 3}, values in [0, 1].
    pub image: Tensor,
    /// `[1, H, W]` with values in {0, 1}.
    pub mask: Tensor,
    pub label: bool,
    pub modality: String,
}

impl Sample {
    /// Builds a sample whose label is derived from the mask.
    pub fn new(case_id: impl Into<String>, image: Tensor, mask: Tensor) -> Result<Self> {
        let label = mask.data().iter().any(|&v| v > 0.5);
        let s = Self {
            case_id: case_id.into(),
            image,
            mask,
            label,
            modality: "FLAIR".into(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.case_id;
        let (ishape, mshape) = (self.image.shape(), self.mask.shape());
        if ishape.len() != 3 || !matches!(ishape[0], 1 | 3) {
            return Err(Error::Dataset(format!("{id}: image must be [1|3, H, W], got {ishape:?}")));
        }
        if mshape.len() != 3 || mshape[0] != 1 || mshape[1..] != ishape[1..] {
            return Err(Error::Dataset(format!(
                "{id}: mask {mshape:?} does not match image {ishape:?}"
            )));
        }
        if self.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Dataset(format!("{id}: image values outside [0, 1]")));
        }
        if self.mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Dataset(format!("{id}: mask is not binary")));
        }
        let nonempty = self.mask.data().contains(&1.0);
        if nonempty != self.label {
            return Err(Error::Dataset(format!(
                "{id}: label {} contradicts a mask with{} foreground",
                u8::from(self.label),
                if nonempty { "" } else { "out" }
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.image.shape()[1], self.image.shape()[2])
    }
}

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Real,
    Synthetic { seed: u64, params: SynthParams },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub source: DataSource,
}

/// Images, masks and labels of a batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[N, C, H, W]`
    pub images: Tensor,
    /// `[N, 1, H, W]`
    pub masks: Tensor,
    pub labels: Vec<bool>,
}

impl Batch {
    /// Classifier targets: one-hot `[N, 2]` over (no tumor, tumor).
    pub fn one_hot(&self) -> Tensor {
        let data = self
            .labels
            .iter()
            .flat_map(|&l| if l { [0.0, 1.0] } else { [1.0, 0.0] })
            .collect();
        Tensor::new([self.labels.len(), 2], data).expect("non-empty batch")
    }
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, source: DataSource) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &samples {
            s.validate()?;
            if !seen.insert(s.case_id.as_str()) {
                return Err(Error::Dataset(format!("duplicate case id {}", s.case_id)));
            }
        }
        Ok(Self { samples, source })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.samples.iter().filter(|s| s.label).count()
    }

    /// Stacks the given samples, which must share shape.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let picked: Vec<&Sample> = indices.iter().map(|&i| &self.samples[i]).collect();
        stack_samples(&picked)
    }
}

pub fn stack_samples(samples: &[&Sample]) -> Result<Batch> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Dataset("empty batch".into()))?;
    let ishape = first.image.shape().to_vec();
    let mut images = Vec::with_capacity(first.image.len() * samples.len());
    let mut masks = Vec::with_capacity(first.mask.len() * samples.len());
    for s in samples {
        if s.image.shape() != ishape.as_slice() {
            return Err(Error::Dataset(format!(
                "{}: shape {:?} differs from {:?} in the same batch",
                s.case_id,
                s.image.shape(),
                ishape
            )));
        }
        images.extend_from_slice(s.image.data());
        masks.extend_from_slice(s.mask.data());
    }
    let n = samples.len();
    Ok(Batch {
        images: Tensor::new([n, ishape[0], ishape[1], ishape[2]], images)?,
        masks: Tensor::new([n, 1, ishape[1], ishape[2]], masks)?,
        labels: samples.iter().map(|s| s.label).collect(),
    })
}
