//! Finite-difference checks of layers and whole networks.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::layers::{Ctx, Layer, Mode};
use crate::nn::store::ParamStore;
use crate::tensor::{grad_check, GradCheckReport, ParamId, Tensor, Var};

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub eps: f64,
    pub seed: u64,
    pub mode: Mode,
    /// Also differentiate with respect to the input tensor.
    pub check_input: bool,
    /// Upper bound on numerically probed coordinates (sampled with `seed`).
    pub max_coords: Option<usize>,
    /// Parameters left out of the check.
    pub skip: Vec<ParamId>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            seed: 0,
            mode: Mode::Train,
            check_input: true,
            max_coords: None,
            skip: Vec::new(),
        }
    }
}

/// Checks the gradient of `sum(forward(x) * r)` for a fixed random `r`
/// with respect to the input and every trainable parameter in `ids`.
pub fn grad_check_forward<F>(
    store: &ParamStore,
    ids: &[ParamId],
    input: &Tensor,
    opts: &CheckOptions,
    forward: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Ctx, Var) -> Result<Var>,
{
    let mut params: Vec<ParamId> = ids
        .iter()
        .copied()
        .filter(|id| store.trainable(*id) && !opts.skip.contains(id))
        .collect();
    params.sort();
    params.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let projection = {
        let mut ctx = Ctx::new(store, opts.mode);
        let x = ctx.input(input.clone(), false);
        let y = forward(&mut ctx, x)?;
        Tensor::randn(ctx.value(y).shape().to_vec(), 1.0, &mut rng)
    };

    let n_input = if opts.check_input { input.len() } else { 0 };
    let mut point: Vec<f64> = Vec::new();
    if opts.check_input {
        point.extend_from_slice(input.data());
    }
    point.extend(store.flatten(&params));

    let coords: Option<Vec<usize>> = opts.max_coords.and_then(|k| {
        (k < point.len()).then(|| {
            let mut c = sample(&mut rng, point.len(), k).into_vec();
            c.sort_unstable();
            c
        })
    });

    let mut scratch = store.clone();
    grad_check(
        |p, need_grad| {
            let x_val = if opts.check_input {
                Tensor::new(input.shape().to_vec(), p[..n_input].to_vec())?
            } else {
                input.clone()
            };
            scratch.unflatten(&params, &p[n_input..]);
            let mut ctx = Ctx::new(&scratch, opts.mode);
            let x = ctx.input(x_val, opts.check_input && need_grad);
            let y = forward(&mut ctx, x)?;
            let loss = ctx.tape.weighted_sum(y, projection.clone())?;
            let value = ctx.value(loss).data()[0];
            if !need_grad {
                return Ok((value, None));
            }
            let grads = ctx.tape.backward(loss)?;
            let by_id: HashMap<ParamId, Tensor> = grads.params().into_iter().collect();
            let mut g = Vec::with_capacity(p.len());
            if opts.check_input {
                g.extend_from_slice(grads.wrt(x).data());
            }
            for id in &params {
                match by_id.get(id) {
                    Some(t) => g.extend_from_slice(t.data()),
                    None => g.extend(std::iter::repeat_n(0.0, scratch.value(*id).len())),
                }
            }
            Ok((value, Some(g)))
        },
        &point,
        opts.eps,
        coords.as_deref(),
    )
}

/// [`grad_check_forward`] for a single layer. In train mode the layer's
/// [`Layer::biases_before_batch_norm`] are excluded from the relative-error
/// sweep; use [`absorbed_bias_gradient`] to confirm they vanish.
pub fn grad_check_layer(layer: &dyn Layer, store: &ParamStore, input: &Tensor, opts: &CheckOptions) -> Result<GradCheckReport> {
    let mut opts = opts.clone();
    if opts.mode == Mode::Train {
        opts.skip.extend(layer.biases_before_batch_norm());
    }
    grad_check_forward(store, &layer.param_ids(), input, &opts, |ctx, x| layer.forward(ctx, x))
}

/// Largest absolute analytic gradient over the biases that feed a
/// batch-statistics normalization (zero up to rounding).
pub fn absorbed_bias_gradient(layer: &dyn Layer, store: &ParamStore, input: &Tensor, seed: u64) -> Result<f64> {
    let mut ctx = Ctx::new(store, Mode::Train);
    let x = ctx.input(input.clone(), false);
    let y = layer.forward(&mut ctx, x)?;
    let r = Tensor::randn(ctx.value(y).shape().to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    let loss = ctx.tape.weighted_sum(y, r)?;
    let grads = ctx.tape.backward(loss)?;
    let absorbed = layer.biases_before_batch_norm();
    Ok(grads
        .params()
        .into_iter()
        .filter(|(id, _)| absorbed.contains(id))
        .flat_map(|(_, g)| g.into_data())
        .fold(0.0, |m, v| m.max(v.abs())))
}
