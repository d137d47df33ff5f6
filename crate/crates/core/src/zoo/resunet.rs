use crate::error::{Error, Result};
use crate::nn::{BlockSpec, Conv2d, ConvTranspose2d, Ctx, Layer, ParamBuilder, PreactResidual};
use crate::tensor::{ConvSpec, ParamId, Tensor, Var};
use crate::zoo::{ChannelSequence, HeadKind, InputContract, ModelGraph, ModelKind, Structure};

#[derive(Clone, Debug)]
pub struct ResUNetConfig {
    pub in_channels: usize,
    pub input_size: (usize, usize),
    pub channels: ChannelSequence,
    /// SE reduction ratio for every residual block; `None` disables SE.
    pub se_ratio: Option<usize>,
    pub seed: u64,
}

impl Default for ResUNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            input_size: (256, 256),
            channels: ChannelSequence::default(),
            se_ratio: Some(4),
            seed: 0,
        }
    }
}

struct UpLevel {
    up: ConvTranspose2d,
    block: PreactResidual,
}

/// U-Net with pre-activated residual blocks. Encoder level `i` feeds its
/// pre-pool output to decoder level `levels - 1 - i` by concatenation.
pub struct ResUNet {
    encoder: Vec<PreactResidual>,
    bridge: PreactResidual,
    decoder: Vec<UpLevel>,
    head: Conv2d,
}

fn residual(b: &mut ParamBuilder, name: &str, cin: usize, cout: usize, se: Option<usize>) -> Result<PreactResidual> {
    let mut spec = BlockSpec::preact_residual(cin, cout);
    if let Some(r) = se {
        spec = spec.with_se(r);
    }
    PreactResidual::new(b, name, &spec)
}

impl ResUNet {
    pub fn new(b: &mut ParamBuilder, cfg: &ResUNetConfig) -> Result<Self> {
        let seq = &cfg.channels;
        let mut encoder = Vec::new();
        let mut cin = cfg.in_channels;
        for (i, &w) in seq.encoder().iter().enumerate() {
            encoder.push(residual(b, &format!("enc.{i}"), cin, w, cfg.se_ratio)?);
            cin = w;
        }
        let bridge = residual(b, "enc.bridge", cin, seq.bottleneck(), cfg.se_ratio)?;
        cin = seq.bottleneck();
        let mut decoder = Vec::new();
        for (i, &w) in seq.decoder().iter().enumerate() {
            let level = b.scoped(format!("dec.{i}"), |b| {
                Ok(UpLevel {
                    up: ConvTranspose2d::new(b, "up", cin, w)?,
                    block: residual(b, "res", 2 * w, w, cfg.se_ratio)?,
                })
            })?;
            decoder.push(level);
            cin = w;
        }
        let head = Conv2d::with_gain(b, "head.conv", ConvSpec::pointwise(cin, 1, 1), true, 1.0)?;
        Ok(Self {
            encoder,
            bridge,
            decoder,
            head,
        })
    }

    pub fn levels(&self) -> usize {
        self.encoder.len()
    }

    pub fn structure(&self) -> Structure {
        let blocks: Vec<&PreactResidual> = self
            .encoder
            .iter()
            .chain(std::iter::once(&self.bridge))
            .chain(self.decoder.iter().map(|l| &l.block))
            .collect();
        Structure {
            block_convs: 2 * blocks.len(),
            projection_convs: blocks.iter().filter(|blk| blk.projection.is_some()).count(),
            transpose_convs: self.decoder.len(),
            head_convs: 1,
            dense_layers: 2 * blocks.iter().filter(|blk| blk.se.is_some()).count(),
            batch_norms: 2 * blocks.len(),
            max_pools: self.encoder.len(),
            blocks: blocks.len(),
            ..Structure::default()
        }
    }

    /// Bridge output (bottleneck feature map).
    pub fn bottleneck_features(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mut skips = Vec::new();
        self.encode(ctx, x, &mut skips)
    }

    fn encode(&self, ctx: &mut Ctx, x: Var, skips: &mut Vec<Var>) -> Result<Var> {
        let mut h = x;
        for level in &self.encoder {
            h = level.forward(ctx, h)?;
            skips.push(h);
            h = ctx.tape.max_pool2d(h)?;
        }
        self.bridge.forward(ctx, h)
    }

    /// Forward pass where `keep_skip[j]` = false replaces decoder level
    /// `j`'s skip tensor with zeros.
    pub fn forward_with_skips(&self, ctx: &mut Ctx, x: Var, keep_skip: &[bool]) -> Result<Var> {
        if keep_skip.len() != self.decoder.len() {
            return Err(Error::InvalidSpec(format!(
                "expected {} skip flags, got {}",
                self.decoder.len(),
                keep_skip.len()
            )));
        }
        let mut skips = Vec::new();
        let mut h = self.encode(ctx, x, &mut skips)?;
        for (level, &keep) in self.decoder.iter().zip(keep_skip) {
            h = level.up.forward(ctx, h)?;
            let mut skip = skips.pop().expect("one skip per level");
            if !keep {
                let zeros = Tensor::zeros(ctx.value(skip).shape().to_vec());
                skip = ctx.tape.leaf(zeros, false);
            }
            let joined = ctx.tape.concat(h, skip)?;
            h = level.block.forward(ctx, joined)?;
        }
        let logits = self.head.forward(ctx, h)?;
        Ok(ctx.tape.sigmoid(logits))
    }
}

impl Layer for ResUNet {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        self.forward_with_skips(ctx, x, &vec![true; self.decoder.len()])
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.encoder.iter().flat_map(|l| l.param_ids()).collect();
        ids.extend(self.bridge.param_ids());
        for level in &self.decoder {
            ids.extend(level.up.param_ids());
            ids.extend(level.block.param_ids());
        }
        ids.extend(self.head.param_ids());
        ids
    }

    fn biases_before_batch_norm(&self) -> Vec<ParamId> {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.bridge))
            .chain(self.decoder.iter().map(|l| &l.block))
            .flat_map(|blk| blk.biases_before_batch_norm())
            .collect()
    }

    fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut specs: Vec<ConvSpec> = self.encoder.iter().flat_map(|l| l.conv_specs()).collect();
        specs.extend(self.bridge.conv_specs());
        specs.extend(self.decoder.iter().flat_map(|l| l.block.conv_specs()));
        specs.push(self.head.spec);
        specs
    }
}

pub fn build_resunet_segmenter(cfg: &ResUNetConfig) -> Result<ModelGraph> {
    let input = InputContract::new(cfg.in_channels, cfg.input_size, 1 << cfg.channels.levels())?;
    let mut b = ParamBuilder::new(cfg.seed);
    let net = ResUNet::new(&mut b, cfg)?;
    Ok(ModelGraph::new(
        ModelKind::ResUNet,
        HeadKind::Segmenter,
        input,
        net.structure(),
        b.finish(),
        Box::new(net),
    ))
}
