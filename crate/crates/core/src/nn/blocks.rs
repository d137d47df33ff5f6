//! Composite blocks built from the primitive layers.

use crate::error::{Error, Result};
use crate::nn::layers::{BatchNorm2d, Conv2d, Ctx, Dense, Layer};
use crate::nn::store::ParamBuilder;
use crate::tensor::{ConvSpec, Padding, ParamId, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    ConvBlock,
    PreactResidual,
    SqueezeExcitation,
    Bottleneck,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Squeeze-excitation reduction ratio. For residual blocks, attaches an
    /// SE gate to the residual branch.
    pub se_ratio: Option<usize>,
    /// Adds a 1x1 projection on the skip path (residual kinds).
    pub projection: bool,
    /// Spatial stride of the bottleneck's 3x3 conv and projection.
    pub stride: usize,
}

impl BlockSpec {
    pub fn conv_block(in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind: BlockKind::ConvBlock,
            in_channels,
            out_channels,
            se_ratio: None,
            projection: false,
            stride: 1,
        }
    }

    /// Pre-activated residual block; projection is enabled automatically
    /// when the channel count changes.
    pub fn preact_residual(in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind: BlockKind::PreactResidual,
            in_channels,
            out_channels,
            se_ratio: None,
            projection: in_channels != out_channels,
            stride: 1,
        }
    }

    pub fn squeeze_excitation(channels: usize, ratio: usize) -> Self {
        Self {
            kind: BlockKind::SqueezeExcitation,
            in_channels: channels,
            out_channels: channels,
            se_ratio: Some(ratio),
            projection: false,
            stride: 1,
        }
    }

    pub fn bottleneck(in_channels: usize, out_channels: usize, stride: usize, projection: bool) -> Self {
        Self {
            kind: BlockKind::Bottleneck,
            in_channels,
            out_channels,
            se_ratio: None,
            projection,
            stride,
        }
    }

    pub fn with_se(mut self, ratio: usize) -> Self {
        self.se_ratio = Some(ratio);
        self
    }

    fn expect(&self, kind: BlockKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::InvalidSpec(format!("expected a {kind:?} spec, got {:?}", self.kind)));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidSpec("channel counts must be >= 1".into()));
        }
        Ok(())
    }

    fn check_ratio(channels: usize, ratio: usize) -> Result<()> {
        if ratio == 0 || !channels.is_multiple_of(ratio) {
            return Err(Error::InvalidSpec(format!(
                "SE reduction ratio {ratio} does not divide {channels} channels"
            )));
        }
        Ok(())
    }
}

/// conv 3x3 (same) -> batch norm -> relu.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBlock {
    pub fn new(b: &mut ParamBuilder, name: &str, spec: &BlockSpec) -> Result<Self> {
        spec.expect(BlockKind::ConvBlock)?;
        b.scoped(name, |b| {
            Ok(Self {
                conv: Conv2d::new(b, "conv", ConvSpec::same3x3(spec.in_channels, spec.out_channels), true)?,
                bn: BatchNorm2d::new(b, "bn", spec.out_channels)?,
            })
        })
    }
}

impl Layer for ConvBlock {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        Ok(ctx.tape.relu(y))
    }

    fn param_ids(&self) -> Vec<ParamId> {
        [self.conv.param_ids(), self.bn.param_ids()].concat()
    }

    fn biases_before_batch_norm(&self) -> Vec<ParamId> {
        self.conv.bias.into_iter().collect()
    }

    fn conv_specs(&self) -> Vec<ConvSpec> {
        vec![self.conv.spec]
    }
}

/// Global-average squeeze, two dense maps and a sigmoid channel gate.
#[derive(Clone, Debug)]
pub struct SeBlock {
    pub channels: usize,
    pub reduce: Dense,
    pub expand: Dense,
}

impl SeBlock {
    pub fn new(b: &mut ParamBuilder, name: &str, spec: &BlockSpec) -> Result<Self> {
        spec.expect(BlockKind::SqueezeExcitation)?;
        let ratio = spec.se_ratio.unwrap_or(4);
        BlockSpec::check_ratio(spec.in_channels, ratio)?;
        Self::build(b, name, spec.in_channels, ratio)
    }

    fn build(b: &mut ParamBuilder, name: &str, channels: usize, ratio: usize) -> Result<Self> {
        BlockSpec::check_ratio(channels, ratio)?;
        let width = channels / ratio;
        b.scoped(name, |b| {
            Ok(Self {
                channels,
                reduce: Dense::new(b, "reduce", channels, width)?,
                expand: Dense::new(b, "expand", width, channels)?,
            })
        })
    }

    /// Per-channel gate values in (0, 1), shape `[N, C]`.
    pub fn gate(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let s = ctx.tape.global_avg_pool(x)?;
        let z = self.reduce.forward(ctx, s)?;
        let z = ctx.tape.relu(z);
        let e = self.expand.forward(ctx, z)?;
        Ok(ctx.tape.sigmoid(e))
    }
}

impl Layer for SeBlock {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let g = self.gate(ctx, x)?;
        ctx.tape.channel_scale(x, g)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        [self.reduce.param_ids(), self.expand.param_ids()].concat()
    }
}

/// (BN -> relu -> conv 3x3) twice on the residual branch, plus an identity
/// or 1x1-projection skip. An optional SE gate scales the branch before
/// the addition.
#[derive(Clone, Debug)]
pub struct PreactResidual {
    pub bn1: BatchNorm2d,
    pub conv1: Conv2d,
    pub bn2: BatchNorm2d,
    pub conv2: Conv2d,
    pub projection: Option<Conv2d>,
    pub se: Option<SeBlock>,
}

impl PreactResidual {
    pub fn new(b: &mut ParamBuilder, name: &str, spec: &BlockSpec) -> Result<Self> {
        spec.expect(BlockKind::PreactResidual)?;
        if spec.in_channels != spec.out_channels && !spec.projection {
            return Err(Error::ChannelMismatch {
                expected: spec.in_channels,
                got: spec.out_channels,
            });
        }
        if let Some(r) = spec.se_ratio {
            BlockSpec::check_ratio(spec.out_channels, r)?;
        }
        let (cin, cout) = (spec.in_channels, spec.out_channels);
        b.scoped(name, |b| {
            Ok(Self {
                bn1: BatchNorm2d::new(b, "bn1", cin)?,
                conv1: Conv2d::new(b, "conv1", ConvSpec::same3x3(cin, cout), true)?,
                bn2: BatchNorm2d::new(b, "bn2", cout)?,
                conv2: Conv2d::new(b, "conv2", ConvSpec::same3x3(cout, cout), true)?,
                projection: if spec.projection {
                    Some(Conv2d::with_gain(b, "proj", ConvSpec::pointwise(cin, cout, 1), true, 1.0)?)
                } else {
                    None
                },
                se: match spec.se_ratio {
                    Some(r) => Some(SeBlock::build(b, "se", cout, r)?),
                    None => None,
                },
            })
        })
    }
}

impl Layer for PreactResidual {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let r = self.bn1.forward(ctx, x)?;
        let r = ctx.tape.relu(r);
        let r = self.conv1.forward(ctx, r)?;
        let r = self.bn2.forward(ctx, r)?;
        let r = ctx.tape.relu(r);
        let mut r = self.conv2.forward(ctx, r)?;
        if let Some(se) = &self.se {
            r = se.forward(ctx, r)?;
        }
        let skip = match &self.projection {
            Some(p) => p.forward(ctx, x)?,
            None => x,
        };
        ctx.tape.add(skip, r)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = [
            self.bn1.param_ids(),
            self.conv1.param_ids(),
            self.bn2.param_ids(),
            self.conv2.param_ids(),
        ]
        .concat();
        if let Some(p) = &self.projection {
            ids.extend(p.param_ids());
        }
        if let Some(se) = &self.se {
            ids.extend(se.param_ids());
        }
        ids
    }

    fn biases_before_batch_norm(&self) -> Vec<ParamId> {
        self.conv1.bias.into_iter().collect()
    }

    fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut specs = vec![self.conv1.spec, self.conv2.spec];
        specs.extend(self.projection.as_ref().map(|p| p.spec));
        specs
    }
}

/// 1x1 reduce -> 3x3 -> 1x1 expand (4x), each followed by batch norm, with
/// relu after the first two and after the skip addition.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub conv3: Conv2d,
    pub bn3: BatchNorm2d,
    pub projection: Option<(Conv2d, BatchNorm2d)>,
}

impl Bottleneck {
    pub fn new(b: &mut ParamBuilder, name: &str, spec: &BlockSpec) -> Result<Self> {
        spec.expect(BlockKind::Bottleneck)?;
        if !spec.out_channels.is_multiple_of(4) {
            return Err(Error::InvalidSpec(format!(
                "bottleneck out channels {} must be 4 x mid channels",
                spec.out_channels
            )));
        }
        if spec.stride == 0 {
            return Err(Error::InvalidSpec("stride must be >= 1".into()));
        }
        if (spec.in_channels != spec.out_channels || spec.stride != 1) && !spec.projection {
            return Err(Error::ChannelMismatch {
                expected: spec.in_channels,
                got: spec.out_channels,
            });
        }
        let mid = spec.out_channels / 4;
        let (cin, cout, stride) = (spec.in_channels, spec.out_channels, spec.stride);
        b.scoped(name, |b| {
            Ok(Self {
                conv1: Conv2d::new(b, "conv1", ConvSpec::pointwise(cin, mid, 1), true)?,
                bn1: BatchNorm2d::new(b, "bn1", mid)?,
                conv2: Conv2d::new(
                    b,
                    "conv2",
                    if stride == 1 {
                        ConvSpec::same3x3(mid, mid)
                    } else {
                        ConvSpec::square(mid, mid, 3, stride, Padding::Explicit(1))
                    },
                    true,
                )?,
                bn2: BatchNorm2d::new(b, "bn2", mid)?,
                conv3: Conv2d::new(b, "conv3", ConvSpec::pointwise(mid, cout, 1), true)?,
                bn3: BatchNorm2d::new(b, "bn3", cout)?,
                projection: if spec.projection {
                    Some((
                        Conv2d::new(b, "proj", ConvSpec::pointwise(cin, cout, stride), true)?,
                        BatchNorm2d::new(b, "proj_bn", cout)?,
                    ))
                } else {
                    None
                },
            })
        })
    }

    pub fn mid_channels(&self) -> usize {
        self.conv1.spec.out_channels
    }

    pub fn out_channels(&self) -> usize {
        self.conv3.spec.out_channels
    }
}

impl Layer for Bottleneck {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let r = self.conv1.forward(ctx, x)?;
        let r = self.bn1.forward(ctx, r)?;
        let r = ctx.tape.relu(r);
        let r = self.conv2.forward(ctx, r)?;
        let r = self.bn2.forward(ctx, r)?;
        let r = ctx.tape.relu(r);
        let r = self.conv3.forward(ctx, r)?;
        let r = self.bn3.forward(ctx, r)?;
        let skip = match &self.projection {
            Some((conv, bn)) => {
                let s = conv.forward(ctx, x)?;
                bn.forward(ctx, s)?
            }
            None => x,
        };
        let sum = ctx.tape.add(skip, r)?;
        Ok(ctx.tape.relu(sum))
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = [
            self.conv1.param_ids(),
            self.bn1.param_ids(),
            self.conv2.param_ids(),
            self.bn2.param_ids(),
            self.conv3.param_ids(),
            self.bn3.param_ids(),
        ]
        .concat();
        if let Some((c, bn)) = &self.projection {
            ids.extend(c.param_ids());
            ids.extend(bn.param_ids());
        }
        ids
    }

    fn biases_before_batch_norm(&self) -> Vec<ParamId> {
        let proj = self.projection.as_ref().and_then(|(c, _)| c.bias);
        [self.conv1.bias, self.conv2.bias, self.conv3.bias, proj]
            .into_iter()
            .flatten()
            .collect()
    }

    fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut specs = vec![self.conv1.spec, self.conv2.spec, self.conv3.spec];
        specs.extend(self.projection.as_ref().map(|(c, _)| c.spec));
        specs
    }
}
