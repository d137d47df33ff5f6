use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx, Dense, Layer, ParamBuilder};
use crate::tensor::{ConvSpec, ParamId, Var};
use crate::zoo::{HeadKind, InputContract, ModelGraph, ModelKind, Structure};

#[derive(Clone, Debug)]
pub struct VggConfig {
    pub in_channels: usize,
    pub input_size: (usize, usize),
    /// Convs per stage.
    pub depths: Vec<usize>,
    /// Channel width of each stage.
    pub widths: Vec<usize>,
    /// Hidden width of the dense head.
    pub hidden: usize,
    pub seed: u64,
}

impl Default for VggConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            input_size: (256, 256),
            depths: vec![2, 2, 3, 3, 3],
            widths: vec![64, 128, 256, 512, 512],
            hidden: 256,
            seed: 0,
        }
    }
}

/// Stages of 3x3 conv + relu, each closed by a 2x2 max pool, then global
/// average pooling and a two-layer dense head.
pub struct Vgg16 {
    stages: Vec<Vec<Conv2d>>,
    fc1: Dense,
    fc2: Dense,
}

impl Vgg16 {
    pub fn new(b: &mut ParamBuilder, cfg: &VggConfig) -> Result<Self> {
        if cfg.depths.len() != cfg.widths.len() || cfg.depths.is_empty() {
            return Err(Error::InvalidSpec("VGG depths and widths must be non-empty and equal length".into()));
        }
        let mut stages = Vec::new();
        let mut cin = cfg.in_channels;
        for (s, (&depth, &width)) in cfg.depths.iter().zip(&cfg.widths).enumerate() {
            let mut convs = Vec::new();
            for i in 0..depth {
                convs.push(Conv2d::new(b, &format!("enc.{s}.conv{i}"), ConvSpec::same3x3(cin, width), true)?);
                cin = width;
            }
            stages.push(convs);
        }
        Ok(Self {
            stages,
            fc1: Dense::new(b, "head.fc1", cin, cfg.hidden)?,
            fc2: Dense::new(b, "head.fc2", cfg.hidden, 2)?,
        })
    }

    pub fn structure(&self) -> Structure {
        Structure {
            block_convs: self.stages.iter().map(Vec::len).sum(),
            dense_layers: 2,
            max_pools: self.stages.len(),
            avg_pools: 1,
            blocks: self.stages.len(),
            ..Structure::default()
        }
    }

    /// Feature map after the last pool.
    pub fn features(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mut h = x;
        for stage in &self.stages {
            for conv in stage {
                let c = conv.forward(ctx, h)?;
                h = ctx.tape.relu(c);
            }
            h = ctx.tape.max_pool2d(h)?;
        }
        Ok(h)
    }
}

impl Layer for Vgg16 {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.features(ctx, x)?;
        let h = ctx.tape.global_avg_pool(h)?;
        let h = self.fc1.forward(ctx, h)?;
        let h = ctx.tape.relu(h);
        let logits = self.fc2.forward(ctx, h)?;
        ctx.tape.softmax(logits)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.stages.iter().flatten().flat_map(|c| c.param_ids()).collect();
        ids.extend(self.fc1.param_ids());
        ids.extend(self.fc2.param_ids());
        ids
    }

    fn conv_specs(&self) -> Vec<ConvSpec> {
        self.stages.iter().flatten().map(|c| c.spec).collect()
    }
}

pub fn build_vgg16_classifier(cfg: &VggConfig) -> Result<ModelGraph> {
    let input = InputContract::new(cfg.in_channels, cfg.input_size, 1 << cfg.depths.len())?;
    let mut b = ParamBuilder::new(cfg.seed);
    let net = Vgg16::new(&mut b, cfg)?;
    Ok(ModelGraph::new(
        ModelKind::Vgg16,
        HeadKind::Classifier,
        input,
        net.structure(),
        b.finish(),
        Box::new(net),
    ))
}
