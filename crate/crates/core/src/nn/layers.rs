use std::collections::HashMap;

use crate::error::Result;
use crate::nn::store::{ParamBuilder, ParamKind, ParamStore};
use crate::tensor::norm::{self, BN_MOMENTUM};
use crate::tensor::{ConvSpec, ParamId, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Forward-pass context: the tape being recorded, read access to the
/// parameters and the running-statistic updates produced in train mode.
pub struct Ctx<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    mode: Mode,
    vars: HashMap<ParamId, Var>,
    stat_updates: Vec<(ParamId, Tensor)>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, mode: Mode) -> Self {
        Self {
            tape: Tape::new(),
            store,
            mode,
            vars: HashMap::new(),
            stat_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Tape leaf for a parameter, created once per context.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.vars.get(&id) {
            return v;
        }
        let p = self.store.get(id);
        let v = self.tape.param(id, p.value.clone(), p.trainable());
        self.vars.insert(id, v);
        v
    }

    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.tape.leaf(value, requires_grad)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        self.tape.value(var)
    }

    fn record_stat(&mut self, id: ParamId, value: Tensor) {
        self.stat_updates.push((id, value));
    }

    /// Splits the context into the tape and the pending running-stat updates.
    pub fn finish(self) -> (Tape, Vec<(ParamId, Tensor)>) {
        (self.tape, self.stat_updates)
    }
}

/// Anything that owns parameters and maps one tensor to another.
pub trait Layer {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var>;

    /// Every parameter tensor owned by the layer, buffers included.
    fn param_ids(&self) -> Vec<ParamId>;

    /// Conv biases that feed straight into a batch norm. Under batch
    /// statistics their gradient is identically zero.
    fn biases_before_batch_norm(&self) -> Vec<ParamId> {
        Vec::new()
    }

    /// Specs of the strided convolutions in forward order.
    fn conv_specs(&self) -> Vec<ConvSpec> {
        Vec::new()
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv2d {
    /// He-initialized convolution (the input is expected to be post-relu).
    pub fn new(b: &mut ParamBuilder, name: &str, spec: ConvSpec, bias: bool) -> Result<Self> {
        Self::with_gain(b, name, spec, bias, 2.0)
    }

    /// Weight std = sqrt(gain / fan_in); gain 1 suits inputs that are not
    /// rectified.
    pub fn with_gain(b: &mut ParamBuilder, name: &str, spec: ConvSpec, bias: bool, gain: f64) -> Result<Self> {
        spec.validate()?;
        b.scoped(name, |b| {
            let fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w;
            let weight = b.weight_with_gain("weight", &spec.weight_shape(), fan_in, gain)?;
            let bias = if bias {
                Some(b.constant("bias", &[spec.out_channels], 0.0, ParamKind::Bias)?)
            } else {
                None
            };
            Ok(Self { spec, weight, bias })
        })
    }
}

impl Layer for Conv2d {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.tape.conv2d(x, w, b, self.spec)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }

    fn conv_specs(&self) -> Vec<ConvSpec> {
        vec![self.spec]
    }
}

/// 2x2 / stride-2 learnable upsampling.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvTranspose2d {
    pub fn new(b: &mut ParamBuilder, name: &str, in_channels: usize, out_channels: usize) -> Result<Self> {
        b.scoped(name, |b| {
            let weight = b.weight_with_gain("weight", &[in_channels, out_channels, 2, 2], in_channels, 1.0)?;
            let bias = b.constant("bias", &[out_channels], 0.0, ParamKind::Bias)?;
            Ok(Self {
                in_channels,
                out_channels,
                weight,
                bias,
            })
        })
    }
}

impl Layer for ConvTranspose2d {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        ctx.tape.conv2d_transpose(x, w, Some(b))
    }

    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

/// Per-channel batch normalization. A frozen layer (gamma not trainable)
/// always normalizes with its running statistics and never updates them.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Self {
                channels,
                gamma: b.constant("gamma", &[channels], 1.0, ParamKind::Gamma)?,
                beta: b.constant("beta", &[channels], 0.0, ParamKind::Beta)?,
                running_mean: b.constant("running_mean", &[channels], 0.0, ParamKind::RunningMean)?,
                running_var: b.constant("running_var", &[channels], 1.0, ParamKind::RunningVar)?,
            })
        })
    }
}

impl Layer for BatchNorm2d {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let frozen = !ctx.store().trainable(self.gamma);
        if ctx.mode() == Mode::Train && !frozen {
            let (y, mean, var) = ctx.tape.batch_norm_train(x, gamma, beta)?;
            let mut rm = ctx.store().value(self.running_mean).clone();
            let mut rv = ctx.store().value(self.running_var).clone();
            norm::update_running(&mut rm, &mean, BN_MOMENTUM);
            norm::update_running(&mut rv, &var, BN_MOMENTUM);
            ctx.record_stat(self.running_mean, rm);
            ctx.record_stat(self.running_var, rv);
            Ok(y)
        } else {
            let rm = ctx.store().value(self.running_mean).clone();
            let rv = ctx.store().value(self.running_var).clone();
            ctx.tape.batch_norm_eval(x, gamma, beta, &rm, &rv)
        }
    }

    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta, self.running_mean, self.running_var]
    }
}

/// Fully connected layer on `[N, in]` inputs.
#[derive(Clone, Debug)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new(b: &mut ParamBuilder, name: &str, in_features: usize, out_features: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Self {
                in_features,
                out_features,
                weight: b.weight("weight", &[out_features, in_features], in_features)?,
                bias: b.constant("bias", &[out_features], 0.0, ParamKind::Bias)?,
            })
        })
    }
}

impl Layer for Dense {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        ctx.tape.dense(x, w, Some(b))
    }

    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}
