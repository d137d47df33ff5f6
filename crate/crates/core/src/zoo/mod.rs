//! The four network builders and the [`ModelGraph`] container.

mod cnn;
mod resnet;
mod resunet;
mod vgg;

use std::fmt;
use std::str::FromStr;

pub use cnn::{build_cnn_baseline, CnnBaseline, CnnConfig};
pub use resnet::{build_resnet50_classifier, ResNet50, ResNetConfig};
pub use resunet::{build_resunet_segmenter, ResUNet, ResUNetConfig};
pub use vgg::{build_vgg16_classifier, Vgg16, VggConfig};

use crate::error::{Error, Result};
use crate::nn::{grad_check_forward, CheckOptions, Ctx, Layer, Mode, ParamAudit, ParamStore};
use crate::tensor::{ConvSpec, GradCheckReport, ParamId, Tape, Tensor, Var};

/// Palindromic encoder/bottleneck/decoder channel widths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelSequence(Vec<usize>);

impl ChannelSequence {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 3 || widths.len().is_multiple_of(2) {
            return Err(Error::InvalidSpec(format!(
                "channel sequence needs an odd length >= 3, got {}",
                widths.len()
            )));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidSpec("channel widths must be >= 1".into()));
        }
        if widths.iter().ne(widths.iter().rev()) {
            return Err(Error::InvalidSpec(format!("channel sequence {widths:?} is not palindromic")));
        }
        Ok(Self(widths))
    }

    pub fn widths(&self) -> &[usize] {
        &self.0
    }

    /// Widths of the encoder levels (front half).
    pub fn encoder(&self) -> &[usize] {
        &self.0[..self.levels()]
    }

    /// Widths of the decoder levels (back half).
    pub fn decoder(&self) -> &[usize] {
        &self.0[self.levels() + 1..]
    }

    pub fn bottleneck(&self) -> usize {
        self.0[self.levels()]
    }

    pub fn levels(&self) -> usize {
        self.0.len() / 2
    }
}

impl Default for ChannelSequence {
    fn default() -> Self {
        Self(vec![8, 16, 32, 64, 128, 256, 128, 64, 32, 16, 8])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    CnnBaseline,
    Vgg16,
    ResNet50,
    ResUNet,
    Custom,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::CnnBaseline => "cnn-baseline",
            ModelKind::Vgg16 => "vgg16",
            ModelKind::ResNet50 => "resnet50",
            ModelKind::ResUNet => "resunet",
            ModelKind::Custom => "custom",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn-baseline" => Ok(ModelKind::CnnBaseline),
            "vgg16" => Ok(ModelKind::Vgg16),
            "resnet50" => Ok(ModelKind::ResNet50),
            "resunet" => Ok(ModelKind::ResUNet),
            other => Err(Error::InvalidSpec(format!(
                "unknown model `{other}` (expected cnn-baseline, vgg16, resnet50 or resunet)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    /// Two-way softmax over (no tumor, tumor), output `[N, 2]`.
    Classifier,
    /// Per-pixel sigmoid probability, output `[N, 1, H, W]`.
    Segmenter,
}

/// Channels and the nominal spatial size; any size divisible by `divisor`
/// is accepted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputContract {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub divisor: usize,
}

impl InputContract {
    pub fn new(channels: usize, size: (usize, usize), divisor: usize) -> Result<Self> {
        let (height, width) = size;
        if height == 0 || width == 0 || height % divisor != 0 || width % divisor != 0 {
            return Err(Error::InvalidSpec(format!(
                "input size {height}x{width} is not divisible by {divisor}"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            divisor,
        })
    }

    pub fn check(&self, batch: &Tensor) -> Result<()> {
        let (_, c, h, w) = batch.dims4()?;
        if c != self.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                got: c,
            });
        }
        if h % self.divisor != 0 || w % self.divisor != 0 {
            return Err(Error::shape(format!(
                "input {h}x{w} is not divisible by {}",
                self.divisor
            )));
        }
        Ok(())
    }

    /// Replicates single-channel images when the model expects more channels.
    pub fn adapt(&self, batch: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = batch.dims4()?;
        if c == self.channels || c != 1 {
            return Ok(batch.clone());
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * self.channels * plane);
        for s in 0..n {
            for _ in 0..self.channels {
                data.extend_from_slice(&batch.data()[s * plane..(s + 1) * plane]);
            }
        }
        Tensor::new([n, self.channels, h, w], data)
    }
}

/// Layer counts reported by each builder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Structure {
    pub stem_convs: usize,
    /// Convolutions inside residual/bottleneck/conv blocks.
    pub block_convs: usize,
    pub projection_convs: usize,
    pub transpose_convs: usize,
    pub head_convs: usize,
    pub dense_layers: usize,
    pub batch_norms: usize,
    pub max_pools: usize,
    pub avg_pools: usize,
    pub blocks: usize,
}

impl Structure {
    pub fn total_convs(&self) -> usize {
        self.stem_convs + self.block_convs + self.projection_convs + self.transpose_convs + self.head_convs
    }
}

/// Loss value, forward output and parameter gradients of one step.
pub struct StepOutput {
    pub loss: f64,
    pub output: Tensor,
    pub grads: Vec<(ParamId, Tensor)>,
}

/// A network together with its parameters, mode and input contract.
pub struct ModelGraph {
    pub kind: ModelKind,
    pub head: HeadKind,
    pub input: InputContract,
    pub structure: Structure,
    store: ParamStore,
    net: Box<dyn Layer + Send + Sync>,
    mode: Mode,
}

impl fmt::Debug for ModelGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelGraph")
            .field("kind", &self.kind)
            .field("head", &self.head)
            .field("input", &self.input)
            .field("params", &self.store.len())
            .field("mode", &self.mode)
            .finish()
    }
}

impl ModelGraph {
    pub fn new(
        kind: ModelKind,
        head: HeadKind,
        input: InputContract,
        structure: Structure,
        store: ParamStore,
        net: Box<dyn Layer + Send + Sync>,
    ) -> Self {
        Self {
            kind,
            head,
            input,
            structure,
            store,
            net,
            mode: Mode::Eval,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> ParamAudit {
        ParamAudit::of_store(&self.store)
    }

    pub fn network(&self) -> &(dyn Layer + Send + Sync) {
        self.net.as_ref()
    }

    /// Convolution specs in forward order (transposed convs excluded).
    pub fn conv_specs(&self) -> Vec<ConvSpec> {
        self.net.conv_specs()
    }

    /// Eval-mode forward: a pure function of weights and input.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.input.check(batch)?;
        let mut ctx = Ctx::new(&self.store, Mode::Eval);
        let x = ctx.input(batch.clone(), false);
        let y = self.net.forward(&mut ctx, x)?;
        Ok(ctx.value(y).clone())
    }

    /// Forward in the current mode without gradients. In train mode the
    /// batch-norm running statistics are updated.
    pub fn forward_mut(&mut self, batch: &Tensor) -> Result<Tensor> {
        self.input.check(batch)?;
        let mut ctx = Ctx::new(&self.store, self.mode);
        let x = ctx.input(batch.clone(), false);
        let y = self.net.forward(&mut ctx, x)?;
        let out = ctx.value(y).clone();
        let (_, updates) = ctx.finish();
        self.apply_stat_updates(updates);
        Ok(out)
    }

    /// Forward, scalar loss and backward in the current mode.
    pub fn loss_and_grads<F>(&mut self, batch: &Tensor, loss_fn: F) -> Result<StepOutput>
    where
        F: FnOnce(&mut Tape, Var) -> Result<Var>,
    {
        self.input.check(batch)?;
        let mut ctx = Ctx::new(&self.store, self.mode);
        let x = ctx.input(batch.clone(), false);
        let y = self.net.forward(&mut ctx, x)?;
        let loss = loss_fn(&mut ctx.tape, y)?;
        let (tape, updates) = ctx.finish();
        let loss_value = tape.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let grads = tape.backward(loss)?.params();
        let output = tape.value(y).clone();
        self.apply_stat_updates(updates);
        Ok(StepOutput {
            loss: loss_value,
            output,
            grads,
        })
    }

    fn apply_stat_updates(&mut self, updates: Vec<(ParamId, Tensor)>) {
        for (id, value) in updates {
            *self.store.value_mut(id) = value;
        }
    }

    /// Finite-difference check of the whole network in train mode. Conv
    /// biases feeding batch-statistics normalization are excluded.
    pub fn grad_check(&self, batch: &Tensor, opts: &CheckOptions) -> Result<GradCheckReport> {
        let mut opts = opts.clone();
        if opts.mode == Mode::Train {
            opts.skip.extend(self.net.biases_before_batch_norm());
        }
        let ids: Vec<ParamId> = self.store.ids().collect();
        grad_check_forward(&self.store, &ids, batch, &opts, |ctx, x| self.net.forward(ctx, x))
    }
}

/// Builder options shared by the named builds.
#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub input_size: (usize, usize),
    /// `None` picks the model's default (1 for segmenters, 3 for classifiers).
    pub in_channels: Option<usize>,
    pub seed: u64,
    pub head: HeadKind,
    pub channels: ChannelSequence,
    pub se_ratio: Option<usize>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            input_size: (256, 256),
            in_channels: None,
            seed: 0,
            head: HeadKind::Classifier,
            channels: ChannelSequence::default(),
            se_ratio: Some(4),
        }
    }
}

/// Builds a model by its CLI name.
pub fn build(kind: ModelKind, opts: &BuildOptions) -> Result<ModelGraph> {
    match kind {
        ModelKind::CnnBaseline => build_cnn_baseline(&CnnConfig {
            in_channels: opts.in_channels.unwrap_or(1),
            input_size: opts.input_size,
            head: opts.head,
            channels: opts.channels.clone(),
            seed: opts.seed,
            ..CnnConfig::default()
        }),
        ModelKind::Vgg16 => build_vgg16_classifier(&VggConfig {
            in_channels: opts.in_channels.unwrap_or(3),
            input_size: opts.input_size,
            seed: opts.seed,
            ..VggConfig::default()
        }),
        ModelKind::ResNet50 => build_resnet50_classifier(&ResNetConfig {
            in_channels: opts.in_channels.unwrap_or(3),
            input_size: opts.input_size,
            seed: opts.seed,
            ..ResNetConfig::default()
        }),
        ModelKind::ResUNet => build_resunet_segmenter(&ResUNetConfig {
            in_channels: opts.in_channels.unwrap_or(1),
            input_size: opts.input_size,
            channels: opts.channels.clone(),
            se_ratio: opts.se_ratio,
            seed: opts.seed,
        }),
        ModelKind::Custom => Err(Error::InvalidSpec("custom models have no named builder".into())),
    }
}

#[cfg(test)]
mod tests;
