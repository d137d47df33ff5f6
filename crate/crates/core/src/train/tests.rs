use super::*;
use crate::data::{synth_dataset, DataSource, Sample, SynthParams};
use crate::nn::{Ctx, Dense, Layer, ParamBuilder};
use crate::tensor::{ParamId, Var};
use crate::zoo::{build_resunet_segmenter, ChannelSequence, InputContract, ModelKind, ResUNetConfig, Structure};

/// flatten -> dense(16 -> 2) -> softmax
struct Linear {
    fc: Dense,
}

impl Layer for Linear {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let f = ctx.tape.flatten(x)?;
        let logits = self.fc.forward(ctx, f)?;
        ctx.tape.softmax(logits)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        self.fc.param_ids()
    }
}

fn linear_model() -> ModelGraph {
    let mut b = ParamBuilder::new(1);
    let fc = Dense::new(&mut b, "head.fc", 16, 2).unwrap();
    ModelGraph::new(
        ModelKind::Custom,
        HeadKind::Classifier,
        InputContract::new(1, (4, 4), 1).unwrap(),
        Structure::default(),
        b.finish(),
        Box::new(Linear { fc }),
    )
}

/// Positives carry a bright top-left quadrant.
fn separable(n: usize) -> Dataset {
    let samples = (0..n)
        .map(|i| {
            let pos = i % 2 == 0;
            let mut img = vec![0.2; 16];
            let mut mask = vec![0.0; 16];
            if pos {
                for k in [0, 1, 4, 5] {
                    img[k] = 1.0;
                    mask[k] = 1.0;
                }
            }
            img[15] = (i as f64 / n as f64) * 0.1;
            Sample::new(format!("s{i}"), Tensor::new([1, 4, 4], img).unwrap(), Tensor::new([1, 4, 4], mask).unwrap())
                .unwrap()
        })
        .collect();
    Dataset::new(samples, DataSource::Real).unwrap()
}

fn tiny_resunet() -> ModelGraph {
    build_resunet_segmenter(&ResUNetConfig {
        input_size: (8, 8),
        channels: ChannelSequence::new(vec![4, 8, 4]).unwrap(),
        se_ratio: Some(2),
        seed: 5,
        ..ResUNetConfig::default()
    })
    .unwrap()
}

fn tiny_masks(n: usize, seed: u64) -> Dataset {
    let p = SynthParams {
        image_size: (8, 8),
        tumor_probability: 1.0,
        ..SynthParams::default()
    };
    synth_dataset(seed, n, &p).unwrap()
}

#[test]
fn batch_schedule_rule() {
    let cfg = TrainConfig::default();
    assert_eq!(batch_schedule(14, &cfg), 8);
    assert_eq!(batch_schedule(15, &cfg), 16);
    let flat = TrainConfig {
        batch_growth_factor: 1.0,
        ..cfg.clone()
    };
    assert!((0..40).all(|e| batch_schedule(e, &flat) == 8));
    let shrink = TrainConfig {
        batch_growth_factor: 0.01,
        ..cfg
    };
    assert_eq!(batch_schedule(20, &shrink), 1);
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
        TrainConfig { base_batch_size: 0, ..TrainConfig::default() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
    }
    assert!("f32".parse::<Precision>().is_err());
}

#[test]
fn linear_model_descends() {
    let mut model = linear_model();
    let data = separable(16);
    let cfg = TrainConfig {
        epochs: 20,
        learning_rate: 0.05,
        optimizer: OptimizerKind::Sgd,
        base_batch_size: 4,
        augment: AugmentPolicy::none(),
        ..TrainConfig::default()
    };
    let h = train(&mut model, &data, &data, &cfg).unwrap();
    assert_eq!(h.rows.len(), 20);
    assert_eq!(h.loss, "bce");
    assert!(h.rows[19].train_loss < h.rows[0].train_loss, "{:?}", h.rows);
    assert_eq!(h.rows[19].val_acc, 1.0);
    assert_eq!(model.mode(), Mode::Eval);
    for r in &h.rows {
        assert!((0.0..=1.0).contains(&r.train_acc) && (0.0..=1.0).contains(&r.val_acc));
        assert!(r.train_loss >= 0.0 && r.val_loss >= 0.0 && r.seconds == 0.0);
    }
}

#[test]
fn training_is_deterministic() {
    let data = tiny_masks(6, 1);
    let cfg = TrainConfig {
        epochs: 3,
        base_batch_size: 3,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = tiny_resunet();
        train(&mut m, &data, &data, &cfg).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.loss, "bce+dice");
}

#[test]
fn freeze_encoder_partition() {
    let mut model = tiny_resunet();
    let oracle: usize = model
        .store()
        .iter()
        .filter(|(_, p)| p.trainable() && (p.name.starts_with("dec.") || p.name.starts_with("head.")))
        .map(|(_, p)| p.value.len())
        .sum();
    let report = freeze(&mut model, &FreezeSelector::AllEncoder).unwrap();
    assert_eq!(report.after.trainable, oracle);
    assert_eq!(report.before.total, report.after.total);
    assert!(report.after.is_consistent());
    assert!(report.frozen.iter().all(|n| n.starts_with("enc.")));

    let snapshot: Vec<(String, Tensor)> = model
        .store()
        .iter()
        .filter(|(_, p)| p.name.starts_with("enc."))
        .map(|(_, p)| (p.name.clone(), p.value.clone()))
        .collect();
    let head_before = model.store().value(model.store().id("head.conv.weight").unwrap()).clone();
    let data = tiny_masks(4, 2);
    let mut trainer = Trainer::new(
        &mut model,
        TrainConfig {
            base_batch_size: 2,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    for _ in 0..5 {
        trainer.train_epoch(&data).unwrap();
    }
    drop(trainer);
    for (name, value) in &snapshot {
        let now = model.store().value(model.store().id(name).unwrap());
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(now), bits(value), "{name} moved");
    }
    assert_ne!(model.store().value(model.store().id("head.conv.weight").unwrap()), &head_before);
}

#[test]
fn freeze_errors() {
    let mut model = tiny_resunet();
    let none = FreezeSelector::Explicit(vec!["nothing.*".into()]);
    assert!(matches!(freeze(&mut model, &none), Err(Error::Freeze(_))));
    assert!(matches!(freeze(&mut model, &"*".parse().unwrap()), Err(Error::Freeze(_))));
    let sel: FreezeSelector = "enc.0.*,dec.0.up.*".parse().unwrap();
    let r = freeze(&mut model, &sel).unwrap();
    assert!(r.frozen.contains(&"dec.0.up.weight".to_string()));
    unfreeze_all(&mut model);
    assert_eq!(model.param_count(), r.before);
}

/// y = W2 relu(W1 x) with W1 frozen: the W2 gradient equals the analytic
/// gradient of the model with W1 as a constant, and W1 gets none.
#[test]
fn frozen_gradients_stay_out_of_the_optimizer_path() {
    struct TwoLayer {
        l1: Dense,
        l2: Dense,
    }
    impl Layer for TwoLayer {
        fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
            let f = ctx.tape.flatten(x)?;
            let h = self.l1.forward(ctx, f)?;
            let h = ctx.tape.relu(h);
            self.l2.forward(ctx, h)
        }
        fn param_ids(&self) -> Vec<ParamId> {
            [self.l1.param_ids(), self.l2.param_ids()].concat()
        }
    }
    let mut b = ParamBuilder::new(3);
    let l1 = Dense::new(&mut b, "enc.l1", 4, 3).unwrap();
    let l2 = Dense::new(&mut b, "head.l2", 3, 2).unwrap();
    let (w1, b1, w2) = (l1.weight, l1.bias, l2.weight);
    let mut model = ModelGraph::new(
        ModelKind::Custom,
        HeadKind::Classifier,
        InputContract::new(1, (2, 2), 1).unwrap(),
        Structure::default(),
        b.finish(),
        Box::new(TwoLayer { l1, l2 }),
    );
    freeze(&mut model, &FreezeSelector::AllEncoder).unwrap();
    let x = Tensor::new([1, 1, 2, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
    let r = Tensor::new([1, 2], vec![1.5, -0.5]).unwrap();
    let rr = r.clone();
    let step = model.loss_and_grads(&x, move |tape, y| tape.weighted_sum(y, rr)).unwrap();
    assert!(step.grads.iter().all(|(id, _)| *id != w1 && *id != b1));

    let s = model.store();
    let (wv, bv) = (s.value(w1).data(), s.value(b1).data());
    let h: Vec<f64> = (0..3)
        .map(|j| (bv[j] + (0..4).map(|k| wv[j * 4 + k] * x.data()[k]).sum::<f64>()).max(0.0))
        .collect();
    let g2 = &step.grads.iter().find(|(id, _)| *id == w2).unwrap().1;
    for o in 0..2 {
        for j in 0..3 {
            assert!((g2.data()[o * 3 + j] - r.data()[o] * h[j]).abs() < 1e-14);
        }
    }
}

#[test]
fn non_finite_loss_names_epoch_and_batch() {
    let mut model = tiny_resunet();
    let id = model.store().id("head.conv.bias").unwrap();
    model.store_mut().value_mut(id).data_mut()[0] = f64::NAN;
    let data = tiny_masks(2, 3);
    let err = train(&mut model, &data, &data, &TrainConfig::default()).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("epoch 1") && msg.contains("batch 1"), "{msg}");
}
