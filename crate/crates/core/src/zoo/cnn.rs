use crate::error::{Error, Result};
use crate::nn::{BlockSpec, Conv2d, ConvBlock, ConvTranspose2d, Ctx, Dense, Layer, ParamBuilder};
use crate::tensor::{ConvSpec, ParamId, Var};
use crate::zoo::{ChannelSequence, HeadKind, InputContract, ModelGraph, ModelKind, Structure};

#[derive(Clone, Debug)]
pub struct CnnConfig {
    pub in_channels: usize,
    pub input_size: (usize, usize),
    pub head: HeadKind,
    /// Stage widths of the classifier variant; each stage is two conv
    /// blocks and a 2x2 pool.
    pub classifier_widths: Vec<usize>,
    /// Widths of the segmenter variant.
    pub channels: ChannelSequence,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            input_size: (256, 256),
            head: HeadKind::Classifier,
            classifier_widths: vec![64, 128],
            channels: ChannelSequence::default(),
            seed: 0,
        }
    }
}

struct Stage {
    blocks: Vec<ConvBlock>,
    up: Option<ConvTranspose2d>,
}

/// Plain conv-block stack. The classifier pools down to a softmax head; the
/// segmenter is an encoder-decoder without skip connections.
pub struct CnnBaseline {
    head: HeadKind,
    encoder: Vec<Stage>,
    middle: Vec<ConvBlock>,
    decoder: Vec<Stage>,
    dense: Option<Dense>,
    out_conv: Option<Conv2d>,
}

fn stage(b: &mut ParamBuilder, name: &str, cin: usize, width: usize, up: bool) -> Result<Stage> {
    b.scoped(name, |b| {
        let (up, first_in) = if up {
            (Some(ConvTranspose2d::new(b, "up", cin, width)?), width)
        } else {
            (None, cin)
        };
        Ok(Stage {
            blocks: vec![
                ConvBlock::new(b, "conv_a", &BlockSpec::conv_block(first_in, width))?,
                ConvBlock::new(b, "conv_b", &BlockSpec::conv_block(width, width))?,
            ],
            up,
        })
    })
}

pub fn build_cnn_baseline(cfg: &CnnConfig) -> Result<ModelGraph> {
    let mut b = ParamBuilder::new(cfg.seed);
    let mut s = Structure::default();
    let net = match cfg.head {
        HeadKind::Classifier => {
            if cfg.classifier_widths.is_empty() {
                return Err(Error::InvalidSpec("classifier needs at least one stage".into()));
            }
            let mut encoder = Vec::new();
            let mut cin = cfg.in_channels;
            for (i, &w) in cfg.classifier_widths.iter().enumerate() {
                encoder.push(stage(&mut b, &format!("enc.{i}"), cin, w, false)?);
                cin = w;
            }
            let dense = Dense::new(&mut b, "head.fc", cin, 2)?;
            s.block_convs = 2 * encoder.len();
            s.batch_norms = s.block_convs;
            s.max_pools = encoder.len();
            s.avg_pools = 1;
            s.dense_layers = 1;
            s.blocks = s.block_convs;
            CnnBaseline {
                head: cfg.head,
                encoder,
                middle: Vec::new(),
                decoder: Vec::new(),
                dense: Some(dense),
                out_conv: None,
            }
        }
        HeadKind::Segmenter => {
            let seq = &cfg.channels;
            let mut encoder = Vec::new();
            let mut cin = cfg.in_channels;
            for (i, &w) in seq.encoder().iter().enumerate() {
                encoder.push(stage(&mut b, &format!("enc.{i}"), cin, w, false)?);
                cin = w;
            }
            let mid = seq.bottleneck();
            let middle = b.scoped("enc.bridge", |b| {
                Ok(vec![
                    ConvBlock::new(b, "conv_a", &BlockSpec::conv_block(cin, mid))?,
                    ConvBlock::new(b, "conv_b", &BlockSpec::conv_block(mid, mid))?,
                ])
            })?;
            cin = mid;
            let mut decoder = Vec::new();
            for (i, &w) in seq.decoder().iter().enumerate() {
                decoder.push(stage(&mut b, &format!("dec.{i}"), cin, w, true)?);
                cin = w;
            }
            let out_conv = Conv2d::new(&mut b, "head.conv", ConvSpec::pointwise(cin, 1, 1), true)?;
            s.block_convs = 2 * (encoder.len() + 1 + decoder.len());
            s.batch_norms = s.block_convs;
            s.transpose_convs = decoder.len();
            s.head_convs = 1;
            s.max_pools = encoder.len();
            s.blocks = s.block_convs;
            CnnBaseline {
                head: cfg.head,
                encoder,
                middle,
                decoder,
                dense: None,
                out_conv: Some(out_conv),
            }
        }
    };
    let input = InputContract::new(cfg.in_channels, cfg.input_size, 1 << net.encoder.len())?;
    Ok(ModelGraph::new(
        ModelKind::CnnBaseline,
        cfg.head,
        input,
        s,
        b.finish(),
        Box::new(net),
    ))
}

impl Layer for CnnBaseline {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mut h = x;
        for st in &self.encoder {
            for blk in &st.blocks {
                h = blk.forward(ctx, h)?;
            }
            h = ctx.tape.max_pool2d(h)?;
        }
        for blk in &self.middle {
            h = blk.forward(ctx, h)?;
        }
        for st in &self.decoder {
            if let Some(up) = &st.up {
                h = up.forward(ctx, h)?;
            }
            for blk in &st.blocks {
                h = blk.forward(ctx, h)?;
            }
        }
        match self.head {
            HeadKind::Classifier => {
                let pooled = ctx.tape.global_avg_pool(h)?;
                let logits = self.dense.as_ref().expect("classifier head").forward(ctx, pooled)?;
                ctx.tape.softmax(logits)
            }
            HeadKind::Segmenter => {
                let logits = self.out_conv.as_ref().expect("segmenter head").forward(ctx, h)?;
                Ok(ctx.tape.sigmoid(logits))
            }
        }
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for st in self.encoder.iter().chain(&self.decoder) {
            if let Some(up) = &st.up {
                ids.extend(up.param_ids());
            }
            for blk in &st.blocks {
                ids.extend(blk.param_ids());
            }
        }
        for blk in &self.middle {
            ids.extend(blk.param_ids());
        }
        if let Some(d) = &self.dense {
            ids.extend(d.param_ids());
        }
        if let Some(c) = &self.out_conv {
            ids.extend(c.param_ids());
        }
        ids
    }

    fn biases_before_batch_norm(&self) -> Vec<ParamId> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|st| st.blocks.iter())
            .chain(&self.middle)
            .flat_map(|blk| blk.biases_before_batch_norm())
            .collect()
    }

    fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut specs = Vec::new();
        for blk in self.encoder.iter().flat_map(|st| st.blocks.iter()).chain(&self.middle) {
            specs.extend(blk.conv_specs());
        }
        for blk in self.decoder.iter().flat_map(|st| st.blocks.iter()) {
            specs.extend(blk.conv_specs());
        }
        specs.extend(self.out_conv.as_ref().map(|c| c.spec));
        specs
    }
}
