use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::{ConvSpec, ParamId, Tensor};
use crate::Error;

fn zero_conv_params(store: &mut ParamStore, ids: &[ParamId]) {
    for &id in ids {
        if matches!(store.get(id).kind, ParamKind::Weight | ParamKind::Bias) {
            let t = store.value_mut(id);
            t.data_mut().fill(0.0);
        }
    }
}

fn eval(layer: &dyn Layer, store: &ParamStore, x: &Tensor, mode: Mode) -> Tensor {
    let mut ctx = Ctx::new(store, mode);
    let v = ctx.input(x.clone(), false);
    let y = layer.forward(&mut ctx, v).unwrap();
    ctx.value(y).clone()
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn conv_block_counts_and_contract() {
    let mut b = ParamBuilder::new(1);
    let block = ConvBlock::new(&mut b, "blk", &BlockSpec::conv_block(1, 8)).unwrap();
    let store = b.finish();
    let audit = param_count(&block, &store);
    assert_eq!(audit.trainable, 72 + 8 + 16);
    assert_eq!(audit.non_trainable, 16);
    assert!(audit.is_consistent());

    let y = eval(&block, &store, &randn(&[2, 1, 64, 64], 2), Mode::Train);
    assert_eq!(y.shape(), &[2, 8, 64, 64]);
    assert!(y.data().iter().all(|&v| v >= 0.0));
}

#[test]
fn wrong_kind_is_rejected() {
    let mut b = ParamBuilder::new(0);
    assert!(matches!(
        ConvBlock::new(&mut b, "x", &BlockSpec::preact_residual(2, 2)),
        Err(Error::InvalidSpec(_))
    ));
    assert!(Bottleneck::new(&mut b, "y", &BlockSpec::conv_block(2, 8)).is_err());
}

#[test]
fn single_conv_and_batch_norm_counts() {
    let mut b = ParamBuilder::new(0);
    let conv = Conv2d::new(&mut b, "c", ConvSpec::same3x3(1, 8), true).unwrap();
    let bn = BatchNorm2d::new(&mut b, "bn", 5).unwrap();
    let store = b.finish();
    assert_eq!(
        param_count(&conv, &store),
        ParamAudit { total: 80, trainable: 80, non_trainable: 0 }
    );
    assert_eq!(
        param_count(&bn, &store),
        ParamAudit { total: 20, trainable: 10, non_trainable: 10 }
    );
    let both: Vec<_> = [conv.param_ids(), bn.param_ids()].concat();
    assert_eq!(ParamAudit::of(&store, &both), param_count(&conv, &store) + param_count(&bn, &store));
}

#[test]
fn zeroed_preact_residual_is_identity() {
    let mut b = ParamBuilder::new(3);
    let block = PreactResidual::new(&mut b, "res", &BlockSpec::preact_residual(8, 8)).unwrap();
    let mut store = b.finish();
    zero_conv_params(&mut store, &block.param_ids());
    let x = randn(&[1, 8, 32, 32], 4);
    for mode in [Mode::Train, Mode::Eval] {
        let y = eval(&block, &store, &x, mode);
        assert_eq!(y, x);
    }
}

#[test]
fn preact_residual_needs_projection_for_channel_change() {
    let mut b = ParamBuilder::new(0);
    let mut spec = BlockSpec::preact_residual(4, 8);
    spec.projection = false;
    assert!(matches!(
        PreactResidual::new(&mut b, "r", &spec),
        Err(Error::ChannelMismatch { .. })
    ));
    let block = PreactResidual::new(&mut b, "ok", &BlockSpec::preact_residual(4, 8)).unwrap();
    let store = b.finish();
    let y = eval(&block, &store, &randn(&[1, 4, 8, 8], 1), Mode::Train);
    assert_eq!(y.shape(), &[1, 8, 8, 8]);
}

#[test]
fn se_block_gate_and_count() {
    let mut b = ParamBuilder::new(5);
    let se = SeBlock::new(&mut b, "se", &BlockSpec::squeeze_excitation(8, 4)).unwrap();
    let mut store = b.finish();
    assert_eq!(param_count(&se, &store).trainable, 8 * 2 + 2 + 2 * 8 + 8);

    let x = randn(&[2, 8, 6, 6], 6);
    let mut ctx = Ctx::new(&store, Mode::Eval);
    let v = ctx.input(x.clone(), false);
    let g = se.gate(&mut ctx, v).unwrap();
    assert!(ctx.value(g).data().iter().all(|&v| v > 0.0 && v < 1.0));

    zero_conv_params(&mut store, &se.expand.param_ids());
    let y = eval(&se, &store, &x, Mode::Eval);
    assert_eq!(y, x.scale(0.5));
}

#[test]
fn se_ratio_must_divide_channels() {
    let mut b = ParamBuilder::new(0);
    assert!(SeBlock::new(&mut b, "se", &BlockSpec::squeeze_excitation(6, 4)).is_err());
    assert!(PreactResidual::new(&mut b, "r", &BlockSpec::preact_residual(6, 6).with_se(4)).is_err());
}

#[test]
fn bottleneck_expansion_identity_and_stride() {
    let mut b = ParamBuilder::new(7);
    let wide = Bottleneck::new(&mut b, "wide", &BlockSpec::bottleneck(64, 256, 1, true)).unwrap();
    assert_eq!(wide.mid_channels(), 64);
    assert_eq!(wide.out_channels(), 256);
    let ident = Bottleneck::new(&mut b, "ident", &BlockSpec::bottleneck(16, 16, 1, false)).unwrap();
    let down = Bottleneck::new(&mut b, "down", &BlockSpec::bottleneck(8, 16, 2, true)).unwrap();
    let mut store = b.finish();

    let y = eval(&down, &store, &randn(&[1, 8, 32, 32], 8), Mode::Train);
    assert_eq!(y.shape(), &[1, 16, 16, 16]);

    zero_conv_params(&mut store, &ident.param_ids());
    let x = randn(&[2, 16, 8, 8], 9);
    let y = eval(&ident, &store, &x, Mode::Train);
    assert_eq!(y, x.map(|v| v.max(0.0)));
}

#[test]
fn bottleneck_rejects_mismatch_without_projection() {
    let mut b = ParamBuilder::new(0);
    assert!(Bottleneck::new(&mut b, "a", &BlockSpec::bottleneck(8, 16, 1, false)).is_err());
    assert!(Bottleneck::new(&mut b, "b", &BlockSpec::bottleneck(16, 16, 2, false)).is_err());
    assert!(Bottleneck::new(&mut b, "c", &BlockSpec::bottleneck(8, 10, 1, true)).is_err());
}

#[test]
fn preact_residual_gradients() {
    let mut b = ParamBuilder::new(11);
    let block = PreactResidual::new(&mut b, "res", &BlockSpec::preact_residual(2, 4).with_se(2)).unwrap();
    let store = b.finish();
    let report = grad_check_layer(&block, &store, &randn(&[2, 2, 6, 6], 12), &CheckOptions::default()).unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
    let x = randn(&[2, 2, 6, 6], 12);
    assert!(absorbed_bias_gradient(&block, &store, &x, 0).unwrap() < 1e-12);
}
