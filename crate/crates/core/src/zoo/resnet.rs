use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, BlockSpec, Bottleneck, Conv2d, Ctx, Dense, Layer, ParamBuilder};
use crate::tensor::{ConvSpec, Padding, ParamId, Var};
use crate::zoo::{HeadKind, InputContract, ModelGraph, ModelKind, Structure};

#[derive(Clone, Debug)]
pub struct ResNetConfig {
    pub in_channels: usize,
    pub input_size: (usize, usize),
    /// Bottleneck mid width of the first stage; doubles per stage.
    pub base_width: usize,
    pub blocks: Vec<usize>,
    pub seed: u64,
}

impl Default for ResNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            input_size: (256, 256),
            base_width: 64,
            blocks: vec![3, 4, 6, 3],
            seed: 0,
        }
    }
}

/// 7x7/2 stem, 2x2 pool, bottleneck stages, global average pool, dense
/// softmax head. Stages after the first downsample in their first block.
pub struct ResNet50 {
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    stages: Vec<Vec<Bottleneck>>,
    fc: Dense,
}

impl ResNet50 {
    pub fn new(b: &mut ParamBuilder, cfg: &ResNetConfig) -> Result<Self> {
        if cfg.blocks.is_empty() || cfg.blocks.contains(&0) || cfg.base_width == 0 {
            return Err(Error::InvalidSpec("ResNet needs non-empty stages and a positive width".into()));
        }
        let stem = Conv2d::new(
            b,
            "enc.stem.conv",
            ConvSpec::square(cfg.in_channels, cfg.base_width, 7, 2, Padding::Explicit(3)),
            true,
        )?;
        let stem_bn = BatchNorm2d::new(b, "enc.stem.bn", cfg.base_width)?;
        let mut stages = Vec::new();
        let mut cin = cfg.base_width;
        for (s, &n) in cfg.blocks.iter().enumerate() {
            let out = (cfg.base_width * 4) << s;
            let mut blocks = Vec::new();
            for i in 0..n {
                let spec = if i == 0 {
                    BlockSpec::bottleneck(cin, out, if s == 0 { 1 } else { 2 }, true)
                } else {
                    BlockSpec::bottleneck(out, out, 1, false)
                };
                blocks.push(Bottleneck::new(b, &format!("enc.stage{s}.block{i}"), &spec)?);
            }
            cin = out;
            stages.push(blocks);
        }
        Ok(Self {
            stem,
            stem_bn,
            stages,
            fc: Dense::new(b, "head.fc", cin, 2)?,
        })
    }

    pub fn structure(&self) -> Structure {
        let blocks: Vec<&Bottleneck> = self.stages.iter().flatten().collect();
        let projections = blocks.iter().filter(|blk| blk.projection.is_some()).count();
        Structure {
            stem_convs: 1,
            block_convs: 3 * blocks.len(),
            projection_convs: projections,
            dense_layers: 1,
            batch_norms: 1 + 3 * blocks.len() + projections,
            max_pools: 1,
            avg_pools: 1,
            blocks: blocks.len(),
            ..Structure::default()
        }
    }

    fn divisor(&self) -> usize {
        4 << (self.stages.len() - 1)
    }
}

impl Layer for ResNet50 {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.stem.forward(ctx, x)?;
        let h = self.stem_bn.forward(ctx, h)?;
        let h = ctx.tape.relu(h);
        let mut h = ctx.tape.max_pool2d(h)?;
        for blk in self.stages.iter().flatten() {
            h = blk.forward(ctx, h)?;
        }
        let h = ctx.tape.global_avg_pool(h)?;
        let logits = self.fc.forward(ctx, h)?;
        ctx.tape.softmax(logits)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = [self.stem.param_ids(), self.stem_bn.param_ids()].concat();
        ids.extend(self.stages.iter().flatten().flat_map(|blk| blk.param_ids()));
        ids.extend(self.fc.param_ids());
        ids
    }

    fn biases_before_batch_norm(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.stem.bias.into_iter().collect();
        ids.extend(self.stages.iter().flatten().flat_map(|blk| blk.biases_before_batch_norm()));
        ids
    }

    fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut specs = vec![self.stem.spec];
        specs.extend(self.stages.iter().flatten().flat_map(|blk| blk.conv_specs()));
        specs
    }
}

pub fn build_resnet50_classifier(cfg: &ResNetConfig) -> Result<ModelGraph> {
    let mut b = ParamBuilder::new(cfg.seed);
    let net = ResNet50::new(&mut b, cfg)?;
    let input = InputContract::new(cfg.in_channels, cfg.input_size, net.divisor())?;
    Ok(ModelGraph::new(
        ModelKind::ResNet50,
        HeadKind::Classifier,
        input,
        net.structure(),
        b.finish(),
        Box::new(net),
    ))
}
