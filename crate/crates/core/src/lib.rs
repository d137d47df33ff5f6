//! Semantic-segmentation engine for MRI-style images.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`]: dense tensors, convolution/pooling/normalization kernels and
//!   a reverse-mode autodiff tape with a finite-difference checker.
//! * [`nn`]: parameter store, layers and the composite blocks (conv block,
//!   pre-activated residual, squeeze-excitation, bottleneck).
//! * [`zoo`]: the CNN baseline, VGG-16, ResNet50 and ResU-Net builders.
//! * [`train`]: losses, optimizers, freezing, augmentation and the epoch loop.
//! * [`data`]: PGM/PPM images, dataset manifests, the synthetic lesion
//!   generator, splitting and the weights archive.
//! * [`pipeline`]: the classify-then-segment router.
//! * [`metrics`] and [`report`]: scores, CSV tables and overlay rendering.
//! * [`cli`]: the `mriseg` command-line driver and its flat config format.
//! * [`study`]: the overfit and transfer-learning experiments.

pub mod cli;
pub mod data;
mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod study;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};
pub use tensor::Tensor;
