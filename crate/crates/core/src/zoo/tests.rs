use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::{Ctx, Layer, Mode, ParamBuilder, ParamKind};
use crate::tensor::Padding;

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn small_seq() -> ChannelSequence {
    ChannelSequence::new(vec![4, 8, 4]).unwrap()
}

#[test]
fn channel_sequence_rules() {
    let d = ChannelSequence::default();
    assert_eq!(d.encoder(), &[8, 16, 32, 64, 128]);
    assert_eq!(d.bottleneck(), 256);
    assert_eq!(d.decoder(), &[128, 64, 32, 16, 8]);
    assert!(ChannelSequence::new(vec![8, 16, 32]).is_err());
    assert!(ChannelSequence::new(vec![8, 16]).is_err());
    assert!(ChannelSequence::new(vec![8, 0, 8]).is_err());
    assert_eq!("resunet".parse::<ModelKind>().unwrap(), ModelKind::ResUNet);
    assert!("unet".parse::<ModelKind>().is_err());
}

#[test]
fn cnn_baseline_first_convs() {
    let model = build_cnn_baseline(&CnnConfig::default()).unwrap();
    let specs = model.conv_specs();
    for spec in &specs[..2] {
        assert_eq!(spec.out_channels, 64);
        assert_eq!((spec.kernel_h, spec.kernel_w), (3, 3));
        assert_eq!(spec.padding, Padding::Same);
        assert_eq!(spec.stride, 1);
    }
}

#[test]
fn cnn_baseline_heads() {
    let cfg = CnnConfig {
        input_size: (16, 16),
        classifier_widths: vec![4, 8],
        ..CnnConfig::default()
    };
    let p = build_cnn_baseline(&cfg).unwrap().forward(&randn(&[3, 1, 16, 16], 1)).unwrap();
    assert_eq!(p.shape(), &[3, 2]);
    for row in p.data().chunks(2) {
        assert!((row[0] + row[1] - 1.0).abs() < 1e-6);
    }

    let seg = build_cnn_baseline(&CnnConfig {
        head: HeadKind::Segmenter,
        channels: small_seq(),
        ..cfg
    })
    .unwrap();
    let y = seg.forward(&randn(&[2, 1, 16, 16], 2)).unwrap();
    assert_eq!(y.shape(), &[2, 1, 16, 16]);
    assert!(build_cnn_baseline(&CnnConfig {
        head: HeadKind::Segmenter,
        input_size: (15, 16),
        ..CnnConfig::default()
    })
    .is_err());
}

fn tiny_vgg(size: usize) -> VggConfig {
    VggConfig {
        input_size: (size, size),
        widths: vec![2, 2, 3, 3, 3],
        hidden: 4,
        ..VggConfig::default()
    }
}

#[test]
fn vgg16_layout() {
    let model = build_vgg16_classifier(&VggConfig::default()).unwrap();
    assert_eq!(model.structure.block_convs, 13);
    let specs = model.conv_specs();
    let widths: Vec<usize> = specs.iter().map(|s| s.out_channels).collect();
    assert_eq!(widths, [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512]);
    assert!(specs.iter().all(|s| s.kernel_h == 3 && s.padding == Padding::Same));
    assert_eq!(model.structure.max_pools, 5);
    assert!(build_vgg16_classifier(&VggConfig {
        input_size: (100, 100),
        ..VggConfig::default()
    })
    .is_err());
}

#[test]
fn vgg16_features_and_softmax() {
    let cfg = tiny_vgg(256);
    let mut b = ParamBuilder::new(0);
    let net = Vgg16::new(&mut b, &cfg).unwrap();
    let store = b.finish();
    let mut ctx = Ctx::new(&store, Mode::Eval);
    let x = ctx.input(randn(&[1, 3, 256, 256], 3), false);
    let f = net.features(&mut ctx, x).unwrap();
    assert_eq!(ctx.value(f).shape(), &[1, 3, 8, 8]);

    let model = build_vgg16_classifier(&tiny_vgg(64)).unwrap();
    let p = model.forward(&randn(&[4, 3, 64, 64], 4)).unwrap();
    for row in p.data().chunks(2) {
        assert!((row[0] + row[1] - 1.0).abs() < 1e-6);
    }
}

#[test]
fn resnet50_audit() {
    let model = build_resnet50_classifier(&ResNetConfig::default()).unwrap();
    let audit = model.param_count();
    assert_eq!(audit.non_trainable, 53_120);
    assert!(audit.trainable > 23_000_000, "{audit:?}");
    assert!(audit.is_consistent());
    let s = model.structure;
    assert_eq!(s.block_convs, 48);
    assert_eq!(s.stem_convs, 1);
    assert_eq!(s.projection_convs, 4);
    assert_eq!(s.max_pools, 1);
    assert_eq!(s.total_convs(), 53);
    assert_eq!(model.conv_specs().len(), 53);
}

#[test]
fn resnet50_reduced_forward() {
    let cfg = ResNetConfig {
        base_width: 2,
        input_size: (64, 64),
        ..ResNetConfig::default()
    };
    let model = build_resnet50_classifier(&cfg).unwrap();
    let p = model.forward(&randn(&[2, 3, 64, 64], 5)).unwrap();
    assert_eq!(p.shape(), &[2, 2]);
    assert!(model.forward(&randn(&[1, 3, 48, 48], 5)).is_err());
    assert!(model.forward(&randn(&[1, 1, 64, 64], 5)).is_err());
}

#[test]
fn resunet_bottleneck_extent() {
    let cfg = ResUNetConfig::default();
    let mut b = ParamBuilder::new(0);
    let net = ResUNet::new(&mut b, &cfg).unwrap();
    let store = b.finish();
    let mut ctx = Ctx::new(&store, Mode::Eval);
    let x = ctx.input(randn(&[1, 1, 256, 256], 6), false);
    let h = net.bottleneck_features(&mut ctx, x).unwrap();
    assert_eq!(ctx.value(h).shape(), &[1, 256, 8, 8]);
}

#[test]
fn resunet_head_contract() {
    let cfg = ResUNetConfig {
        input_size: (64, 64),
        ..ResUNetConfig::default()
    };
    let mut model = build_resunet_segmenter(&cfg).unwrap();
    assert_eq!(model.input.divisor, 32);
    let x = randn(&[2, 1, 64, 64], 7);
    let y = model.forward(&x).unwrap();
    assert_eq!(y.shape(), &[2, 1, 64, 64]);
    assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));

    let ids: Vec<_> = model
        .store()
        .iter()
        .filter(|(_, p)| p.name.starts_with("head.") && p.kind == ParamKind::Weight)
        .map(|(id, _)| id)
        .collect();
    assert_eq!(ids.len(), 1);
    model.store_mut().value_mut(ids[0]).data_mut().fill(0.0);
    let bias = model.store().id("head.conv.bias").unwrap();
    model.store_mut().value_mut(bias).data_mut().fill(0.0);
    let y = model.forward(&x).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.5));

    assert!(build_resunet_segmenter(&ResUNetConfig {
        input_size: (48, 48),
        ..ResUNetConfig::default()
    })
    .is_err());
}

#[test]
fn resunet_skips_are_wired() {
    let cfg = ResUNetConfig {
        input_size: (32, 32),
        ..ResUNetConfig::default()
    };
    let mut b = ParamBuilder::new(8);
    let net = ResUNet::new(&mut b, &cfg).unwrap();
    let store = b.finish();
    let x = randn(&[1, 1, 32, 32], 9);
    let run = |keep: &[bool]| {
        let mut ctx = Ctx::new(&store, Mode::Eval);
        let v = ctx.input(x.clone(), false);
        let y = net.forward_with_skips(&mut ctx, v, keep).unwrap();
        ctx.value(y).clone()
    };
    let full = run(&[true; 5]);
    let mut plain = Ctx::new(&store, Mode::Eval);
    let v = plain.input(x.clone(), false);
    let y = net.forward(&mut plain, v).unwrap();
    assert_eq!(plain.value(y), &full);
    for j in 0..5 {
        let mut keep = [true; 5];
        keep[j] = false;
        assert!(run(&keep).max_abs_diff(&full).unwrap() > 1e-9, "skip {j} has no effect");
    }
}

#[test]
fn unique_names_and_consistent_audits() {
    let models = [
        build(ModelKind::CnnBaseline, &BuildOptions { input_size: (16, 16), ..BuildOptions::default() }).unwrap(),
        build_vgg16_classifier(&tiny_vgg(32)).unwrap(),
        build(
            ModelKind::ResUNet,
            &BuildOptions {
                input_size: (32, 32),
                head: HeadKind::Segmenter,
                ..BuildOptions::default()
            },
        )
        .unwrap(),
    ];
    for m in &models {
        let mut names: Vec<&str> = m.store().iter().map(|(_, p)| p.name.as_str()).collect();
        let n = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), n);
        assert!(m.param_count().is_consistent());
        assert_eq!(m.mode(), Mode::Eval);
    }
}

#[test]
fn eval_forward_is_deterministic_and_batch_independent() {
    let cfg = ResUNetConfig {
        input_size: (16, 16),
        channels: small_seq(),
        seed: 3,
        ..ResUNetConfig::default()
    };
    let model = build_resunet_segmenter(&cfg).unwrap();
    let x = randn(&[3, 1, 16, 16], 10);
    let a = model.forward(&x).unwrap();
    assert_eq!(a, model.forward(&x).unwrap());
    let singles: Vec<Tensor> = (0..3)
        .map(|i| {
            let xi = Tensor::new([1, 1, 16, 16], x.data()[i * 256..(i + 1) * 256].to_vec()).unwrap();
            model.forward(&xi).unwrap()
        })
        .collect();
    let stacked = Tensor::stack(&singles).unwrap();
    assert!(a.max_abs_diff(&stacked).unwrap() < 1e-6);
}

#[test]
fn train_mode_updates_running_stats_only_in_train() {
    let cfg = ResUNetConfig {
        input_size: (8, 8),
        channels: small_seq(),
        ..ResUNetConfig::default()
    };
    let mut model = build_resunet_segmenter(&cfg).unwrap();
    let rm = model.store().id("enc.0.bn1.running_mean").unwrap();
    let before = model.store().value(rm).clone();
    let x = randn(&[2, 1, 8, 8], 11);
    model.forward_mut(&x).unwrap();
    assert_eq!(model.store().value(rm), &before);
    model.set_mode(Mode::Train);
    model.forward_mut(&x).unwrap();
    assert_ne!(model.store().value(rm), &before);
}

fn check(model: &ModelGraph, x: &Tensor, coords: usize) {
    for seed in 0..3 {
        let opts = CheckOptions {
            seed,
            max_coords: Some(coords),
            ..CheckOptions::default()
        };
        let r = model.grad_check(x, &opts).unwrap();
        assert!(r.max_relative_error < 1e-4, "{} seed {seed}: {r:?}", model.name());
    }
}

#[test]
fn reduced_builds_pass_grad_check() {
    let cnn = build_cnn_baseline(&CnnConfig {
        head: HeadKind::Segmenter,
        input_size: (8, 8),
        channels: ChannelSequence::new(vec![2, 4, 2]).unwrap(),
        ..CnnConfig::default()
    })
    .unwrap();
    check(&cnn, &randn(&[2, 1, 8, 8], 20), 200);

    let vgg = build_vgg16_classifier(&VggConfig {
        input_size: (8, 8),
        depths: vec![1, 2],
        widths: vec![4, 6],
        hidden: 5,
        ..VggConfig::default()
    })
    .unwrap();
    check(&vgg, &randn(&[2, 3, 8, 8], 21), 200);

    let resnet = build_resnet50_classifier(&ResNetConfig {
        in_channels: 1,
        input_size: (32, 32),
        base_width: 2,
        blocks: vec![1, 2],
        ..ResNetConfig::default()
    })
    .unwrap();
    check(&resnet, &randn(&[2, 1, 32, 32], 22), 200);

    let resunet = build_resunet_segmenter(&ResUNetConfig {
        input_size: (8, 8),
        channels: small_seq(),
        se_ratio: Some(2),
        ..ResUNetConfig::default()
    })
    .unwrap();
    check(&resunet, &randn(&[2, 1, 8, 8], 23), 200);
}
